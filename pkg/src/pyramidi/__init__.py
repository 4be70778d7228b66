"""One-shot multi-track symbolic music modelling toolkit.

Typical flow: parse and quantize a MIDI file into a :class:`PianoRoll`,
tokenize it with per-track pitch-group dictionaries, fit a coarse-to-fine
stack of recurrent-memory transformer stages on that single segment, sample
continuations, and score them against the source distribution.

>>> from pyramidi import load_midi, quantize, train, generate, evaluate
>>> roll = quantize(load_midi("segment.mid"))
>>> bundle = train(roll)
>>> samples = generate(bundle)
>>> report = evaluate(roll, samples)
"""

from .errors import (
    DataError,
    MidiParseError,
    NumericError,
    OutOfDictionaryError,
    PyramidiError,
    UsageError,
)
from .metrics import (
    EvalReport,
    SampleScore,
    evaluate,
    group_distribution,
    group_overlap,
    kl_divergence_bits,
)
from .midi_io import (
    MidiSong,
    NoteEvent,
    PianoRoll,
    load_midi,
    parse_midi,
    quantize,
    render_midi,
    save_midi,
)
from .pgroup import (
    PitchGroupDictionary,
    TokenSequence,
    build_dictionaries,
    decode,
    dump_dictionaries,
    encode,
    load_dictionaries,
)
from .pipeline import (
    GenerateConfig,
    ModelBundle,
    TrainConfig,
    TrainedStage,
    generate,
    load_bundle,
    save_bundle,
    top_p_sample,
    train,
)
from .pyramid import (
    ScaleSpec,
    SequencePyramid,
    build_pyramid,
    choose_scales,
    downsample,
    upsample,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # errors
    "PyramidiError",
    "UsageError",
    "DataError",
    "MidiParseError",
    "OutOfDictionaryError",
    "NumericError",
    # midi
    "NoteEvent",
    "MidiSong",
    "PianoRoll",
    "parse_midi",
    "load_midi",
    "render_midi",
    "save_midi",
    "quantize",
    # tokens
    "PitchGroupDictionary",
    "TokenSequence",
    "build_dictionaries",
    "encode",
    "decode",
    "dump_dictionaries",
    "load_dictionaries",
    # pyramid
    "ScaleSpec",
    "SequencePyramid",
    "downsample",
    "upsample",
    "build_pyramid",
    "choose_scales",
    # pipeline
    "TrainConfig",
    "GenerateConfig",
    "TrainedStage",
    "ModelBundle",
    "train",
    "generate",
    "top_p_sample",
    "save_bundle",
    "load_bundle",
    # metrics
    "SampleScore",
    "EvalReport",
    "group_distribution",
    "kl_divergence_bits",
    "group_overlap",
    "evaluate",
]
