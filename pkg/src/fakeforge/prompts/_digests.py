"""SHA-256 digests of the shipped prompt assets (generated)."""

ASSET_DIGESTS = {
    "animal_fake": "4ae60de6f3ce1a80d66b917b0352249e39ebcac5c69ddbb85a4f43384bb79ce5",
    "animal_real": "7d511e2d301a79239b48806e87e3af4ea9b68420f98083fda185a9a28ea58607",
    "document_fake": "9ed042f57c206e8b9f98e3744668fef80fbe322e110e26b5581036dd94faddaf",
    "document_real": "00b9bef2b630fb622648b83e85616aa01c3f67155453f10fbcdd3e6b01f93d42",
    "face_manipulation_fake": "165b0a2c3c6d1a2960d2830853fd228b060f8372ecd1c033927ad151ee311a19",
    "face_manipulation_real": "6513a6295066746f1ab95a029ec0c271858a5ee106a702d48fd842cf94d57913",
    "human_fake": "4b1be7180de9fd3b6491537fee2d8571b47f1ac0dcf886d02f77b8146b59f9cb",
    "human_real": "3552ada3475264463484ad6f939722f449e1a43c28ae75d2fde544d569236de7",
    "merge_instruction": "4a4681e29246168a4a1773a1ca3e864c59141fb5d23e62500c02debfcbf6f701",
    "object_fake": "94eaa76a33006c3d3bf6a5a6b8e16205badc2a2acaeaaaf7682025e7bb1e6cd4",
    "object_real": "3042a47720da7c4f65956e5703bf30dedd70ef62655b2101604b2488c43c966f",
    "satellite_fake": "85a58924704e677731c92a7d1107e1bfd27fe22d781bad24a01ffa63f5de4205",
    "satellite_real": "3a498cacc7bfea2fd49af87ec4c186306f5ee97df1b2351efeb3e07c0c68466f",
    "scene_fake": "21481a5364d1ee812b95d9d2ad0e0baa9f29562432a82e08d0107308e40d883d",
    "scene_real": "de3a3ea7dd1ae9fcd0caf6e9d0596924e95cdd42e0c5a963e32fd470261c866c",
}
