"""fakeforge: explained synthetic-image-detection datasets and benchmarks.

The package builds question/answer datasets in which every image carries a
real/fake verdict plus a free-text explanation, and scores chat-capable
vision-language models on detection accuracy and explanation quality.

Typical flow::

    manifest -> categorize -> annotate -> build-dataset -> evaluate / robustness

All model traffic goes through OpenAI-compatible HTTP endpoints, see
:mod:`fakeforge.gateway`.
"""

__version__ = "0.1.0"

from .datamodel import (  # noqa: E402
    AnnotationBundle, Authenticity, Category, EvalPrediction, ImageRecord, MetricReport,
    QAPair, Split, Verdict,
)

__all__ = [
    "__version__", "AnnotationBundle", "Authenticity", "Category", "EvalPrediction",
    "ImageRecord", "MetricReport", "QAPair", "Split", "Verdict",
]
