"""Stage-addressable recipe runner.

Stages::

    1  data preparation (manifest validation, rule-based transcription)
    2  audio/score formatting: resampling and silence segmentation
    3  length filtering of train/dev
    4  token list
    5  feature extraction and statistics
    6  acoustic model training (stub: ground-truth pass-through + augmentation preview)
    7  Griffin-Lim vocoding
    8  objective evaluation
    9  packing

Every stage reads the previous stages' outputs under ``work_dir/stage<N>/``
and rewrites its own directory from scratch, so re-running is deterministic.
"""

import dataclasses
import io
import logging
import math
import shutil
import subprocess
import tarfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dsp
from .augment import AugmentSpec, mixup_features, pitch_shift_score, sample_lambda
from .corpus import (
    Corpus,
    Utterance,
    build_token_list,
    load_corpus,
    read_token_list,
    save_corpus,
    write_token_list,
)
from .errors import (
    AllFiltered,
    BadDump,
    ConfigError,
    MissingArtifact,
    StageFailed,
    SvsError,
    UnpairedUtterance,
)
from .estimators import FeatureStats
from .featurize import frame_level_features, syllable_level_features
from .metrics import evaluate, format_report
from .score import (
    normalize_score,
    parse_smf,
    segment_by_silence,
    transcribe_rule_based,
    write_smf,
)

logger = logging.getLogger(__name__)

SPLITS = ("train", "dev", "test")
FILTERED_SPLITS = ("train", "dev")
EVAL_SPLIT = "test"
NO_SCORE = "-"
TAR_RECORD_MODE = 0o644


@dataclass
class PipelineConfig:
    data_dir: Path = None
    work_dir: Path = None
    stage: int = 1
    stop_stage: int = 9
    sample_rate_hz: int = 24000
    n_fft: int = 1024
    win_length: int = 1024
    hop_length: int = 256
    n_mels: int = 80
    fmin_hz: float = 80.0
    fmax_hz: float = 0.0  # 0 means sample_rate / 2
    f0_fmin_hz: float = 50.0
    f0_fmax_hz: float = 1000.0
    min_len_s: float = 0.5
    max_len_s: float = 30.0
    min_sil_s: float = 0.3
    griffin_lim_iters: int = 32
    mel_inversion: str = "nnls"
    pitch_shift: int = 0
    mixup_alpha: float = 0.4
    seed: int = 0
    n_workers: int = 1

    # keys that describe where/how a run happens rather than what it computes
    RUNTIME_KEYS = ("data_dir", "work_dir", "stage", "stop_stage", "n_workers")

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.data_dir is None or self.work_dir is None:
            raise ConfigError("data_dir and work_dir are required")
        self.data_dir = Path(self.data_dir).resolve()
        self.work_dir = Path(self.work_dir).resolve()
        if not (1 <= self.stage <= 9 and 1 <= self.stop_stage <= 9):
            raise ConfigError("stages must lie in 1..9")
        if self.stage > self.stop_stage:
            raise ConfigError(f"stage {self.stage} is after stop_stage {self.stop_stage}")
        if not 0 <= self.min_len_s < self.max_len_s:
            raise ConfigError("need 0 <= min_len_s < max_len_s")
        if self.n_workers < 1:
            raise ConfigError("n_workers must be >= 1")
        if self.griffin_lim_iters < 1:
            raise ConfigError("griffin_lim_iters must be >= 1")
        if self.mel_inversion not in ("nnls", "pinv"):
            raise ConfigError("mel_inversion must be nnls or pinv")
        try:
            self.frame_params
            self.augment
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def frame_params(self):
        return dsp.FrameParams(self.sample_rate_hz, self.n_fft, self.win_length, self.hop_length)

    @property
    def mel_fmax(self):
        return self.fmax_hz or self.sample_rate_hz / 2

    @property
    def augment(self):
        return AugmentSpec(self.pitch_shift, self.mixup_alpha, self.seed)

    def stage_dir(self, n):
        return self.work_dir / f"stage{n}"

    def to_text(self, include_runtime=False):
        """Flat ``key = value`` rendering; runtime keys omitted by default."""
        lines = []
        for f in dataclasses.fields(self):
            if not include_runtime and f.name in self.RUNTIME_KEYS:
                continue
            lines.append(f"{f.name} = {getattr(self, f.name)}\n")
        return "".join(lines)


def parse_config_text(text):
    """Read ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"line {line_no}: expected 'key = value'")
        values[key.strip()] = value.strip()
    return values


def make_config(values):
    """Build a :class:`PipelineConfig` from string (or typed) values."""
    kinds = {f.name: f.type for f in dataclasses.fields(PipelineConfig)}
    typed = {}
    for key, value in values.items():
        if value is None:
            continue
        if key not in kinds:
            raise ConfigError(f"unknown config key {key!r}")
        kind = kinds[key]
        try:
            if kind is int or kind == "int":
                typed[key] = int(value)
            elif kind is float or kind == "float":
                typed[key] = float(value)
            elif kind is Path:
                typed[key] = Path(value)
            else:
                typed[key] = str(value)
        except ValueError:
            raise ConfigError(f"bad value for {key}: {value!r}") from None
    return PipelineConfig(**typed)


# ---------------------------------------------------------------------------
# helpers


def load_audio_ref(ref, base_dir):
    """Read a manifest audio entry: a file path, or a shell command ending in ``|``."""
    ref = ref.strip()
    if ref.endswith("|"):
        proc = subprocess.run(ref[:-1], shell=True, cwd=base_dir, capture_output=True)
        if proc.returncode != 0:
            raise SvsError(f"audio command failed: {ref!r}")
        return dsp.read_wav(proc.stdout)
    path = Path(ref)
    if not path.is_absolute():
        path = Path(base_dir) / path
    return dsp.load_wav(path)


def _map(fn, items, n_workers):
    """Ordered map, optionally across worker processes."""
    items = list(items)
    if n_workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(fn, items))


def _fresh_dir(path):
    if path.exists():
        shutil.rmtree(path)
    path.mkdir(parents=True)
    return path


def _present_splits(root):
    return [s for s in SPLITS if (Path(root) / s / "wav.scp").is_file()]


def _read_table(path):
    table = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        key, value = line.split()
        table[key] = int(value)
    return table


def _write_table(path, table):
    Path(path).write_text("".join(f"{k} {v}\n" for k, v in table.items()), encoding="utf-8")


def _load_split(config, stage, split):
    root = config.stage_dir(stage)
    return load_corpus(root / split, split,
                       _read_table(config.stage_dir(1) / "spk2id"),
                       _read_table(config.stage_dir(1) / "lang2id"))


def _load_score(utt, labels_end):
    notes = parse_smf(Path(utt.midi_ref).read_bytes())
    return normalize_score(notes, total_s=max(labels_end, notes.total_s))


# ---------------------------------------------------------------------------
# stage 1


def _transcribe_job(args):
    utt, split_dir, out_dir, config = args
    audio = load_audio_ref(utt.audio_ref, split_dir)
    p = dsp.FrameParams(audio.sample_rate_hz, config.n_fft, config.win_length, config.hop_length)
    f0 = dsp.estimate_f0(audio, p, config.f0_fmin_hz, config.f0_fmax_hz)
    notes = transcribe_rule_based(f0, utt.labels)
    path = out_dir / f"{utt.utt_id}.mid"
    path.write_bytes(write_smf(notes))
    return str(path)


def prepare_stage(config):
    """Validate the raw corpus, resolve references, transcribe missing scores."""
    out = _fresh_dir(config.stage_dir(1))
    splits = _present_splits(config.data_dir)
    if "train" not in splits:
        raise SvsError(f"no train split under {config.data_dir}")
    train = load_corpus(config.data_dir / "train", "train")
    _write_table(out / "spk2id", train.singer_table)
    _write_table(out / "lang2id", train.lang_table)
    for split in splits:
        split_dir = config.data_dir / split
        corpus = load_corpus(split_dir, split, train.singer_table, train.lang_table)
        midi_dir = _fresh_dir(out / split / "midi")
        todo = [u for u in corpus if u.midi_ref.strip() == NO_SCORE]
        made = dict(zip((u.utt_id for u in todo),
                        _map(_transcribe_job, [(u, split_dir, midi_dir, config) for u in todo],
                             config.n_workers)))
        utts = []
        for u in corpus:
            audio_ref = u.audio_ref
            if not audio_ref.strip().endswith("|"):
                audio_ref = str((split_dir / audio_ref).resolve())
            midi_ref = made.get(u.utt_id) or str((split_dir / u.midi_ref).resolve())
            utts.append(dataclasses.replace(u, audio_ref=audio_ref, midi_ref=midi_ref))
        if todo:
            logger.info("stage 1: transcribed %d score(s) in %s", len(todo), split)
        save_corpus(Corpus(split, utts, corpus.singer_table, corpus.lang_table), out / split)
        # pipe commands run relative to the original split directory
        (out / split / "source_dir").write_text(str(split_dir) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# stage 2


def _format_job(args):
    utt, source_dir, out_dir, config = args
    audio = dsp.resample(load_audio_ref(utt.audio_ref, source_dir), config.sample_rate_hz)
    sr = audio.sample_rate_hz
    labels_end = utt.labels.entries[-1].end_s if len(utt.labels) else 0.0
    notes = _load_score(utt, labels_end)
    records = []
    for k, seg in enumerate(segment_by_silence(notes, utt.labels, config.min_sil_s)):
        seg_id = f"{utt.utt_id}_seg{k:03d}"
        lo = int(math.floor(seg.start_s * sr + 0.5))
        hi = int(math.floor(seg.end_s * sr + 0.5))
        wav_path = out_dir / "wav" / f"{seg_id}.wav"
        midi_path = out_dir / "midi" / f"{seg_id}.mid"
        dsp.save_wav(wav_path, dsp.AudioBuffer(audio.samples[lo:hi], sr))
        midi_path.write_bytes(write_smf(seg.notes))
        records.append(Utterance(seg_id, str(wav_path), str(midi_path), seg.labels,
                                 utt.singer_id, utt.lang_id))
    return records


def format_stage(corpus, config, out_dir=None, source_dir=None):
    """Resample audio, segment audio and score at silences, rewrite manifests."""
    out_dir = Path(out_dir or config.stage_dir(2) / corpus.split_name)
    _fresh_dir(out_dir)
    (out_dir / "wav").mkdir()
    (out_dir / "midi").mkdir()
    source_dir = source_dir or out_dir
    jobs = [(u, source_dir, out_dir, config) for u in corpus]
    segments = [r for batch in _map(_format_job, jobs, config.n_workers) for r in batch]
    segments.sort(key=lambda u: u.utt_id)
    formatted = Corpus(corpus.split_name, segments, corpus.singer_table, corpus.lang_table)
    save_corpus(formatted, out_dir)
    return formatted


def _stage2(config):
    _fresh_dir(config.stage_dir(2))
    for split in _present_splits(config.stage_dir(1)):
        corpus = _load_split(config, 1, split)
        source = Path((config.stage_dir(1) / split / "source_dir").read_text().strip())
        formatted = format_stage(corpus, config, config.stage_dir(2) / split, source)
        logger.info("stage 2: %s -> %d segments", split, len(formatted))


# ---------------------------------------------------------------------------
# stage 3


def filter_stage(corpus, min_len_s, max_len_s, log_path=None):
    """Keep utterances whose labeled span lies in ``[min_len_s, max_len_s]``."""
    kept, removed = [], []
    for u in corpus:
        span = u.labels.span_s
        if span < min_len_s:
            removed.append(f"{u.utt_id} {span:.4f} shorter than {min_len_s}")
        elif span > max_len_s:
            removed.append(f"{u.utt_id} {span:.4f} longer than {max_len_s}")
        else:
            kept.append(u)
    if log_path is not None:
        Path(log_path).write_text("".join(r + "\n" for r in removed), encoding="utf-8")
    if not kept:
        raise AllFiltered(f"every utterance of {corpus.split_name!r} was filtered out")
    return Corpus(corpus.split_name, kept, corpus.singer_table, corpus.lang_table)


def _stage3(config):
    out = _fresh_dir(config.stage_dir(3))
    for split in _present_splits(config.stage_dir(2)):
        corpus = _load_split(config, 2, split)
        (out / split).mkdir()
        if split in FILTERED_SPLITS:
            corpus = filter_stage(corpus, config.min_len_s, config.max_len_s,
                                  out / split / "filtered.log")
        else:
            (out / split / "filtered.log").write_text("", encoding="utf-8")
        save_corpus(corpus, out / split)


# ---------------------------------------------------------------------------
# stage 4


def _stage4(config):
    out = _fresh_dir(config.stage_dir(4))
    tl = build_token_list([_load_split(config, 3, "train")])
    write_token_list(out / "tokens.txt", tl)
    logger.info("stage 4: %d tokens", len(tl))


# ---------------------------------------------------------------------------
# stage 5


@dataclass
class StatsSummary:
    n_utts: int
    total_frames: int
    frame_counts: dict = field(default_factory=dict)
    mean: np.ndarray = None
    var: np.ndarray = None


def _features_job(args):
    utt, out_dir, tl, config = args
    p = config.frame_params
    audio = dsp.load_wav(utt.audio_ref)
    mel = dsp.logmel(audio, p, config.n_mels, config.fmin_hz, config.mel_fmax).frames
    dsp.save_features(out_dir / "feats" / f"{utt.utt_id}.mskf", mel)
    notes = _load_score(utt, utt.labels.entries[-1].end_s)
    frame = frame_level_features(utt.labels, notes, tl, len(audio), p)
    syl = syllable_level_features(utt.labels, notes, tl, len(audio), p)
    dsp.save_features(out_dir / "score_frame" / f"{utt.utt_id}.mskf", frame.as_matrix())
    dsp.save_features(out_dir / "score_syllable" / f"{utt.utt_id}.mskf", syl.as_matrix())
    stats = FeatureStats().partial_fit(mel)
    return utt.utt_id, mel.shape[0], stats.n_samples_seen_, stats.mean_, stats.m2_


def stats_stage(corpus, config, tl, out_dir):
    """Dump log-mel and score features; single-pass mean/variance over all frames."""
    out_dir = _fresh_dir(Path(out_dir))
    for sub in ("feats", "score_frame", "score_syllable"):
        (out_dir / sub).mkdir()
    results = _map(_features_job, [(u, out_dir, tl, config) for u in corpus], config.n_workers)
    stats = FeatureStats()
    counts = {}
    for utt_id, n_frames, n, mean, m2 in results:
        counts[utt_id] = n_frames
        stats.merge(n, mean, m2)
    (out_dir / "feats_shape").write_text(
        "".join(f"{u} {counts[u]}\n" for u in sorted(counts)), encoding="utf-8")
    summary = StatsSummary(len(counts), sum(counts.values()), counts, stats.mean_, stats.var_)
    dsp.save_features(out_dir / "stats.mskf", np.stack([summary.mean, summary.var]))
    return summary


def _stage5(config):
    _fresh_dir(config.stage_dir(5))
    tl = read_token_list(config.stage_dir(4) / "tokens.txt")
    for split in _present_splits(config.stage_dir(3)):
        summary = stats_stage(_load_split(config, 3, split), config, tl,
                              config.stage_dir(5) / split)
        logger.info("stage 5: %s %d utts, %d frames", split, summary.n_utts, summary.total_frames)


# ---------------------------------------------------------------------------
# stage 6 (stub)


def _augment_preview(config, out_dir):
    """Pitch-shifted score features and mixed log-mel crops for the train split."""
    spec = config.augment
    corpus = _load_split(config, 3, "train")
    tl = read_token_list(config.stage_dir(4) / "tokens.txt")
    feats_dir = config.stage_dir(5) / "train" / "feats"
    out_dir.mkdir(parents=True)
    log = []
    if spec.pitch_shift_semitones:
        for u in corpus:
            audio_len = dsp.load_wav(u.audio_ref).samples.size
            notes = pitch_shift_score(_load_score(u, u.labels.entries[-1].end_s),
                                      spec.pitch_shift_semitones)
            frame = frame_level_features(u.labels, notes, tl, audio_len, config.frame_params)
            dsp.save_features(out_dir / f"{u.utt_id}_shift{spec.pitch_shift_semitones:+d}.mskf",
                              frame.as_matrix())
    rng = spec.rng()
    ids = corpus.utt_ids
    for a, b in zip(ids[::2], ids[1::2]):
        fa = dsp.read_features(feats_dir / f"{a}.mskf")
        fb = dsp.read_features(feats_dir / f"{b}.mskf")
        n = min(len(fa), len(fb))
        lam = sample_lambda(spec.mixup_alpha, rng)
        dsp.save_features(out_dir / f"{a}__{b}_mixup.mskf", mixup_features(fa[:n], fb[:n], lam))
        log.append(f"{a} {b} {lam:.6f} {n}\n")
    (out_dir / "mixup.log").write_text("".join(log), encoding="utf-8")


def _stage6(config):
    out = _fresh_dir(config.stage_dir(6))
    logger.warning("stage 6: acoustic model training is not implemented; "
                   "passing ground-truth features through (oracle resynthesis)")
    src = config.stage_dir(5) / EVAL_SPLIT / "feats"
    dst = out / EVAL_SPLIT / "mel"
    dst.mkdir(parents=True)
    if src.is_dir():
        for path in sorted(src.glob("*.mskf")):
            shutil.copyfile(path, dst / path.name)
    _augment_preview(config, out / "train" / "augment")


# ---------------------------------------------------------------------------
# stage 7


def _vocode_job(args):
    path, wav_dir, feat_dir, config = args
    frames = dsp.read_features(path)
    if frames.shape[1] != config.n_mels:
        raise BadDump(path.name, f"expected {config.n_mels} columns, got {frames.shape[1]}")
    mel = dsp.MelSpectrogram(frames.astype(np.float64), config.frame_params, config.n_mels,
                             config.fmin_hz, config.mel_fmax)
    audio = dsp.griffin_lim(mel, config.griffin_lim_iters, method=config.mel_inversion)
    dsp.save_wav(wav_dir / f"{path.stem}.wav", audio)
    shutil.copyfile(path, feat_dir / path.name)


def vocoder_stage(mel_dir, config, out_dir):
    """Griffin-Lim every ``MSKF`` dump in ``mel_dir``; keep the dumps alongside."""
    out_dir = _fresh_dir(Path(out_dir))
    wav_dir = out_dir / "wav"
    feat_dir = out_dir / "feats"
    wav_dir.mkdir()
    feat_dir.mkdir()
    dumps = sorted(Path(mel_dir).glob("*.mskf"))
    _map(_vocode_job, [(p, wav_dir, feat_dir, config) for p in dumps], config.n_workers)
    return wav_dir


def _stage7(config):
    _fresh_dir(config.stage_dir(7))
    vocoder_stage(config.stage_dir(6) / EVAL_SPLIT / "mel", config,
                  config.stage_dir(7) / EVAL_SPLIT)


# ---------------------------------------------------------------------------
# stage 8


def _evaluate_job(args):
    utt_id, ref_path, hyp_path, config = args
    report = evaluate(dsp.load_wav(ref_path), dsp.load_wav(hyp_path), config.frame_params,
                      config.n_mels, config.fmin_hz, config.mel_fmax)
    return utt_id, report


def evaluate_stage(ref_dir, hyp_dir, config, report_path):
    """Score every ``<utt_id>.wav`` of ``ref_dir`` against its twin in ``hyp_dir``."""
    refs = sorted(Path(ref_dir).glob("*.wav"))
    jobs = []
    for ref in refs:
        hyp = Path(hyp_dir) / ref.name
        if not hyp.is_file():
            raise UnpairedUtterance(ref.stem)
        jobs.append((ref.stem, ref, hyp, config))
    reports = dict(_map(_evaluate_job, jobs, config.n_workers))
    Path(report_path).write_text(format_report(reports), encoding="utf-8")
    return reports


def _stage8(config):
    out = _fresh_dir(config.stage_dir(8) / EVAL_SPLIT)
    corpus = _load_split(config, 3, EVAL_SPLIT)
    ref_dir = _fresh_dir(out / "ref")
    for u in corpus:
        shutil.copyfile(u.audio_ref, ref_dir / f"{u.utt_id}.wav")
    evaluate_stage(ref_dir, config.stage_dir(7) / EVAL_SPLIT / "wav", config, out / "report.txt")


# ---------------------------------------------------------------------------
# stage 9


def _pack_members(work_dir, config_text):
    work_dir = Path(work_dir)
    required = {
        "tokens.txt": work_dir / "stage4" / "tokens.txt",
        "stats/train_stats.mskf": work_dir / "stage5" / "train" / "stats.mskf",
        "stats/train_feats_shape": work_dir / "stage5" / "train" / "feats_shape",
        "report.txt": work_dir / "stage8" / EVAL_SPLIT / "report.txt",
    }
    members = {"config.txt": config_text.encode("utf-8")}
    for name, path in required.items():
        if not path.is_file():
            raise MissingArtifact(name)
        members[name] = path.read_bytes()
    feat_dir = work_dir / "stage7" / EVAL_SPLIT / "feats"
    if not feat_dir.is_dir():
        raise MissingArtifact("feats")
    for path in sorted(feat_dir.glob("*.mskf")):
        members[f"feats/{path.name}"] = path.read_bytes()
    return members


def write_archive(path, members):
    """Uncompressed ustar archive with sorted members and zeroed metadata."""
    buf = io.BytesIO()
    with tarfile.open(fileobj=buf, mode="w", format=tarfile.USTAR_FORMAT) as tar:
        for name in sorted(members):
            data = members[name]
            info = tarfile.TarInfo(name)
            info.size = len(data)
            info.mtime = 0
            info.mode = TAR_RECORD_MODE
            info.uid = info.gid = 0
            info.uname = info.gname = ""
            tar.addfile(info, io.BytesIO(data))
    Path(path).write_bytes(buf.getvalue())
    return Path(path)


def read_archive(path):
    with tarfile.open(path, mode="r") as tar:
        return {m.name: tar.extractfile(m).read() for m in tar.getmembers() if m.isfile()}


def pack_stage(work_dir, config_text, out_path=None):
    work_dir = Path(work_dir)
    members = _pack_members(work_dir, config_text)
    out_path = Path(out_path or work_dir / "stage9" / "package.tar")
    out_path.parent.mkdir(parents=True, exist_ok=True)
    return write_archive(out_path, members)


def _stage9(config):
    _fresh_dir(config.stage_dir(9))
    path = pack_stage(config.work_dir, config.to_text())
    logger.info("stage 9: packed %s", path)


# ---------------------------------------------------------------------------


STAGES = {
    1: prepare_stage,
    2: _stage2,
    3: _stage3,
    4: _stage4,
    5: _stage5,
    6: _stage6,
    7: _stage7,
    8: _stage8,
    9: _stage9,
}


def run(config):
    """Run stages ``config.stage`` through ``config.stop_stage``; 0 on success."""
    config.validate()
    config.work_dir.mkdir(parents=True, exist_ok=True)
    for n in range(config.stage, config.stop_stage + 1):
        logger.info("stage %d: start", n)
        try:
            STAGES[n](config)
        except Exception as exc:
            raise StageFailed(n, exc) from exc
    return 0
