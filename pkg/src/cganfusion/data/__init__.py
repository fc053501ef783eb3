from .dataset import Dataset, read_dataset, stack_batch, write_dataset
from .ingest import ingest_scene_pair
from .pipeline import (
    SPLITS,
    DataError,
    DatasetManifest,
    PatchRecord,
    RecordEntry,
    ScenePair,
    build_triplets,
    conditioning,
    extract_patches,
    split_counts,
    split_locations,
)
from .synth import SynthConfig, synth_generate, synth_series
