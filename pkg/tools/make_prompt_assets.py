"""Regenerate prompt asset files and the embedded digest table.

Run from the repository root: python3 tools/make_prompt_assets.py
"""
import hashlib
import re
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
ASSETS = ROOT / "src" / "fakeforge" / "prompts" / "assets"
SOURCE = ROOT / "tools" / "prompt_sources.txt"

FORMAT_LEAD = (
    "Please output your answer in non-segmented text format, not Markdown format, as follows:"
)


def main():
    text = SOURCE.read_text(encoding="utf-8")
    blocks = re.split(r"^=== (\S+) ===\n", text, flags=re.M)[1:]
    digests = {}
    for name, body in zip(blocks[::2], blocks[1::2]):
        body = body.strip("\n") + "\n"
        body = body.replace("{FORMAT_LEAD}", FORMAT_LEAD)
        path = ASSETS / f"{name}.txt"
        path.write_text(body, encoding="utf-8", newline="\n")
        digests[name] = hashlib.sha256(body.encode("utf-8")).hexdigest()
    lines = ['"""SHA-256 digests of the shipped prompt assets (generated)."""', "", "ASSET_DIGESTS = {"]
    lines += [f'    "{k}": "{v}",' for k, v in sorted(digests.items())]
    lines += ["}", ""]
    (ROOT / "src" / "fakeforge" / "prompts" / "_digests.py").write_text("\n".join(lines))
    print(f"wrote {len(digests)} assets")


if __name__ == "__main__":
    main()
