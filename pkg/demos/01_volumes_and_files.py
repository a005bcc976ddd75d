"""Containers and the MMV file format.

Multi-modal volumes, segmentation masks, and saliency maps share one layout:
modality-major float arrays with (H, W) or (H, W, D) spatial dims. On disk
they become a one-line JSON header plus a raw little-endian float32 payload,
and a write/read cycle is bit-exact.

Run:  python demos/01_volumes_and_files.py
"""

from pathlib import Path

import numpy as np

from mmsaliency import (
    DatasetManifest,
    ManifestRecord,
    MultiModalVolume,
    SegmentationMask,
    load_dataset,
    load_manifest,
    read_volume,
    save_manifest,
    write_mask,
    write_volume,
)

out = Path("demo_output/01")
out.mkdir(parents=True, exist_ok=True)

# A tiny two-modality image: T1C carries a bright 2x2 feature.
data = np.zeros((2, 4, 4), dtype=np.float32)
data[1, 1:3, 1:3] = 0.9
volume = MultiModalVolume(("T1", "T1C"), data)
print(f"volume: {volume.n_modalities} modalities, dims {volume.dims}")

write_volume(volume, out / "sample.mmv")
raw = (out / "sample.mmv").read_bytes()
header, payload = raw.split(b"\n", 1)
print("header:", header.decode())
print(f"payload: {len(payload)} bytes = 2 x 4 x 4 x 4")

back = read_volume(out / "sample.mmv")
print("round-trip bit-exact:", back.data.tobytes() == volume.data.tobytes())

# The mask marks where the feature lives, per modality.
mask_data = np.zeros((2, 4, 4), dtype=np.float32)
mask_data[1, 1:3, 1:3] = 1.0
mask = SegmentationMask(("T1", "T1C"), mask_data)
write_mask(mask, out / "sample_mask.mmv")

# A manifest ties samples, labels, and files together.
manifest = DatasetManifest(
    (
        ManifestRecord(
            "demo0", 0, str(out / "sample.mmv"), str(out / "sample_mask.mmv")
        ),
    ),
    ("LGG", "HGG"),
)
save_manifest(manifest, out / "manifest.json")
loaded = load_manifest(out / "manifest.json")
samples = load_dataset(loaded)
print(
    f"manifest: {len(loaded)} sample(s), classes {loaded.class_names}, "
    f"mask voxels {int(samples[0].mask.data.sum())}"
)
