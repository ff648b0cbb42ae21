"""Corpus construction tools: nearest-neighbor annotation matching, merged
annotation files, histogram-based detection filtering, four-way valence
categorization, balanced subject-disjoint partitioning, and distribution
statistics.

Annotator tracks are irregular (timestamp, value) pairs; frame k (1-based)
sits at k * 0.03333 seconds (all videos run at 30 fps) and takes the value of
the track entry with the nearest timestamp, earlier entry on ties.
"""

from __future__ import annotations

import csv
import enum
import math
from bisect import bisect_left
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FRAME_INTERVAL = 0.03333  # seconds per frame at 30 fps, as used by the matcher
VALUE_MIN, VALUE_MAX = -1000, 1000


class CorpusError(ValueError):
    pass


@dataclass
class AnnotationTrack:
    """Ordered (timestamp seconds, value) pairs for one dimension."""

    entries: list          # [(float, int), ...]
    dimension: str = "valence"

    def __post_init__(self):
        if self.dimension not in ("valence", "arousal"):
            raise CorpusError(f"unknown dimension {self.dimension!r}")
        last = -math.inf
        for t, v in self.entries:
            if t <= last:
                raise CorpusError(f"timestamps must be strictly increasing (at {t})")
            last = t
            if not (VALUE_MIN <= v <= VALUE_MAX):
                raise CorpusError(f"value {v} outside [{VALUE_MIN}, {VALUE_MAX}]")

    @classmethod
    def parse(cls, path, dimension="valence"):
        """Read 'timestamp<SPACE>value' lines."""
        entries = []
        with open(path) as fh:
            for line_no, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                parts = line.split()
                if len(parts) != 2:
                    raise CorpusError(f"{path}:{line_no}: expected 'timestamp value'")
                entries.append((float(parts[0]), int(parts[1])))
        return cls(entries, dimension)

    def write(self, path):
        with open(path, "w") as fh:
            for t, v in self.entries:
                fh.write(f"{t:.3f} {v}\n")


def match_track(track: AnnotationTrack, frame_count, frame_interval=FRAME_INTERVAL):
    """Per-frame values for frames 1..frame_count by nearest timestamp.

    Ties between two equally distant entries go to the earlier timestamp.
    """
    if not track.entries:
        raise CorpusError("empty annotation track")
    times = [t for t, _ in track.entries]
    values = [v for _, v in track.entries]
    out = []
    for k in range(1, frame_count + 1):
        target = k * frame_interval
        i = bisect_left(times, target)
        if i == 0:
            best = 0
        elif i >= len(times):
            best = len(times) - 1
        else:
            # earlier entry wins ties, so prefer i-1 on <=
            before, after = times[i - 1], times[i]
            best = i - 1 if target - before <= after - target else i
        out.append(values[best])
    return out


def merge(valence_values, arousal_values):
    """Rows (frame number, valence, arousal), frame numbers ascending."""
    if len(valence_values) != len(arousal_values):
        raise CorpusError(f"frame count mismatch: {len(valence_values)} valence "
                          f"vs {len(arousal_values)} arousal")
    return [(k + 1, v, a) for k, (v, a) in
            enumerate(zip(valence_values, arousal_values))]


def write_merged(rows, path):
    with open(path, "w") as fh:
        for k, v, a in rows:
            fh.write(f"{k}\t{v}\t{a}\n")


# ---------------------------------------------------------------------------
# Histogram-based detection filtering


@dataclass
class HistogramFeature:
    counts: np.ndarray  # 3 x bins
    bins: int

    def __post_init__(self):
        if self.bins < 2:
            raise CorpusError("bins must be >= 2")


def histogram(image, bins=256) -> HistogramFeature:
    """Per-channel histograms of an H x W x 3 uint8 image."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise CorpusError(f"expected H x W x 3 image, got {image.shape}")
    counts = np.stack([
        np.histogram(image[:, :, c], bins=bins, range=(0, 256))[0]
        for c in range(3)
    ]).astype(np.float64)
    return HistogramFeature(counts, bins)


def similarity(a: HistogramFeature, b: HistogramFeature) -> float:
    """Correlation coefficient of the normalized concatenated histograms,
    in [-1, 1]; identical images give 1.0."""
    if a.bins != b.bins:
        raise CorpusError(f"bin mismatch: {a.bins} vs {b.bins}")
    x = (a.counts / a.counts.sum(axis=1, keepdims=True)).ravel()
    y = (b.counts / b.counts.sum(axis=1, keepdims=True)).ravel()
    dx = x - x.mean()
    dy = y - y.mean()
    denom = math.sqrt((dx * dx).sum() * (dy * dy).sum())
    if denom == 0.0:
        return 1.0 if np.array_equal(x, y) else 0.0
    return float((dx * dy).sum() / denom)


def pick_face(candidates, reference, bins=256) -> int:
    """Index of the candidate most similar to the reference; lowest index on
    ties."""
    if not candidates:
        raise CorpusError("no candidates")
    ref = histogram(reference, bins)
    scores = [similarity(histogram(c, bins), ref) for c in candidates]
    best = 0
    for i, s in enumerate(scores):
        if s > scores[best]:
            best = i
    return best


# ---------------------------------------------------------------------------
# Categorization and partitioning


class Category(enum.Enum):
    MAINLY_POSITIVE = "mainly_positive"
    MAINLY_NEGATIVE = "mainly_negative"
    BOTH_VALENCE = "both_valence"
    NEUTRAL = "neutral"


def categorize(merged_rows) -> Category:
    """Four-way bucket from the valence distribution: with p the fraction of
    frames above +100 and q the fraction below -100, mainly-positive needs
    p >= 0.5 and q < 0.2, mainly-negative mirrors it, both-valence needs both
    fractions >= 0.2, anything else is neutral."""
    if not merged_rows:
        raise CorpusError("empty annotation")
    values = np.array([row[1] for row in merged_rows])
    p = float((values > 100).mean())
    q = float((values < -100).mean())
    if p >= 0.5 and q < 0.2:
        return Category.MAINLY_POSITIVE
    if q >= 0.5 and p < 0.2:
        return Category.MAINLY_NEGATIVE
    if p >= 0.2 and q >= 0.2:
        return Category.BOTH_VALENCE
    return Category.NEUTRAL


@dataclass
class VideoMeta:
    video: str
    frames: int
    fps: int = 30
    gender: str = "f"          # f | m
    subject: str = ""
    category: Category | None = None
    split: str | None = None

    def __post_init__(self):
        if self.fps != 30:
            raise CorpusError(f"{self.video}: fps must be 30, got {self.fps}")
        if self.gender not in ("f", "m"):
            raise CorpusError(f"{self.video}: gender must be 'f' or 'm'")
        if not self.subject:
            self.subject = self.video


SPLITS = ("train", "validate", "test")


class PartitionError(RuntimeError):
    pass


def split_totals(n_videos, ratios=(0.64, 0.16, 0.20)):
    """Videos per split: validate and test floor their shares, train takes
    the remainder (159 -> 103/25/31)."""
    val = int(n_videos * ratios[1])
    test = int(n_videos * ratios[2])
    return (n_videos - val - test, val, test)


def category_quotas(category_counts, totals):
    """Integer quota matrix Q[cat][split]: row sums match the category census,
    column sums match the split totals, cells stay within 1 of proportional."""
    cats = list(category_counts)
    n = sum(category_counts.values())
    quota = {}
    remainders = []
    col_left = list(totals)
    row_left = {}
    for cat in cats:
        row = []
        for s, total in enumerate(totals):
            exact = category_counts[cat] * total / n
            row.append(int(exact))
            remainders.append((exact - int(exact), cat, s))
        quota[cat] = row
        row_left[cat] = category_counts[cat] - sum(row)
        for s in range(3):
            col_left[s] -= row[s]
    remainders.sort(key=lambda item: (-item[0], item[1].value, item[2]))
    for _, cat, s in remainders:
        if row_left[cat] > 0 and col_left[s] > 0:
            quota[cat][s] += 1
            row_left[cat] -= 1
            col_left[s] -= 1
    # any seats left over (degenerate ties): first fit
    for cat in cats:
        for s in range(3):
            while row_left[cat] > 0 and col_left[s] > 0:
                quota[cat][s] += 1
                row_left[cat] -= 1
                col_left[s] -= 1
    return quota


@dataclass
class _SubjectGroup:
    subject: str
    videos: list = field(default_factory=list)

    def cat_counts(self):
        out = {}
        for v in self.videos:
            out[v.category] = out.get(v.category, 0) + 1
        return out

    @property
    def size(self):
        return len(self.videos)


def _partition_score(groups, assignment, quota, totals, gender_targets,
                     tolerance):
    """Violation score (hard) plus balance cost (soft); 0 hard = feasible."""
    counts = {cat: [0, 0, 0] for cat in quota}
    sizes = [0, 0, 0]
    genders = [0, 0, 0]  # female counts
    frames = [0, 0, 0]
    for g in groups:
        s = assignment[g.subject]
        for v in g.videos:
            counts[v.category][s] += 1
            sizes[s] += 1
            frames[s] += v.frames
            if v.gender == "f":
                genders[s] += 1
    hard = 0
    for cat, row in quota.items():
        for s in range(3):
            hard += max(0, abs(counts[cat][s] - row[s]) - tolerance) * 10
    for s in range(3):
        hard += abs(sizes[s] - totals[s]) * 100
        hard += max(0, abs(genders[s] - gender_targets[s]) - 2) * 5
    total_frames = sum(frames) or 1
    ratios = (0.64, 0.16, 0.20)
    soft = sum(abs(frames[s] / total_frames - ratios[s]) for s in range(3))
    soft += sum(abs(counts[cat][s] - row[s]) * 0.01
                for cat, row in quota.items() for s in range(3))
    return hard, soft


def partition(videos, ratios=(0.64, 0.16, 0.20), seed=0, max_rounds=2000):
    """Assign each video's split honoring category quotas (within 1), exact
    split sizes, subject disjointness, and per-split gender balance within 2.

    Greedy largest-subject-first placement followed by seeded local repair
    (subject moves and swaps).  Exact quota adherence is attempted first;
    when subject grouping makes that infeasible the solver retries allowing
    each category cell to drift by one.  Raises PartitionError when a single
    subject cannot fit any split, or when repair cannot satisfy the
    constraints.
    """
    try:
        return _partition(videos, ratios, seed, max_rounds, tolerance=0)
    except PartitionError as exc:
        if "has" in str(exc):  # oversized subject: retrying cannot help
            raise
        return _partition(videos, ratios, seed, max_rounds, tolerance=1)


def _partition(videos, ratios, seed, max_rounds, tolerance):
    videos = list(videos)
    for v in videos:
        if v.category is None:
            raise CorpusError(f"{v.video}: category not assigned")
    groups_map = {}
    for v in videos:
        groups_map.setdefault(v.subject, _SubjectGroup(v.subject)).videos.append(v)
    groups = sorted(groups_map.values(), key=lambda g: (-g.size, g.subject))

    totals = split_totals(len(videos), ratios)
    biggest = max(g.size for g in groups)
    if biggest > max(totals):
        blocker = next(g for g in groups if g.size == biggest)
        raise PartitionError(f"subject {blocker.subject!r} has {biggest} videos, "
                             f"more than the largest split ({max(totals)})")
    census = {}
    for v in videos:
        census[v.category] = census.get(v.category, 0) + 1
    quota = category_quotas(census, totals)
    n_female = sum(1 for v in videos if v.gender == "f")
    gender_targets = [round(n_female * t / len(videos)) for t in totals]

    rng = np.random.default_rng(seed)
    assignment = {}
    counts = {cat: [0, 0, 0] for cat in quota}
    sizes = [0, 0, 0]

    # greedy: largest subjects first into the split with most headroom
    for g in groups:
        best_s, best_cost = None, None
        order = list(range(3))
        rng.shuffle(order)
        for s in order:
            if sizes[s] + g.size > totals[s]:
                cost = 1e9 + sizes[s] + g.size - totals[s]
            else:
                cost = 0.0
                for cat, k in g.cat_counts().items():
                    over = counts[cat][s] + k - quota[cat][s]
                    cost += max(0, over) * 10 + abs(over)
            if best_cost is None or cost < best_cost:
                best_s, best_cost = s, cost
        assignment[g.subject] = best_s
        sizes[best_s] += g.size
        for cat, k in g.cat_counts().items():
            counts[cat][best_s] += k

    # local repair: seeded moves/swaps accepted when they lower the score
    hard, soft = _partition_score(groups, assignment, quota, totals,
                                  gender_targets, tolerance)
    for _ in range(max_rounds):
        if hard == 0:
            break
        improved = False
        order = rng.permutation(len(groups))
        for gi in order:
            g = groups[int(gi)]
            current = assignment[g.subject]
            for s in range(3):
                if s == current:
                    continue
                assignment[g.subject] = s
                h2, s2 = _partition_score(groups, assignment, quota, totals,
                                          gender_targets, tolerance)
                if (h2, s2) < (hard, soft):
                    hard, soft = h2, s2
                    improved = True
                    current = s
                else:
                    assignment[g.subject] = current
        if not improved:
            # try pairwise swaps before giving up
            swapped = False
            idx = rng.permutation(len(groups))
            for ii in range(len(groups)):
                for jj in range(ii + 1, min(ii + 30, len(groups))):
                    a, b = groups[int(idx[ii])], groups[int(idx[jj])]
                    sa, sb = assignment[a.subject], assignment[b.subject]
                    if sa == sb:
                        continue
                    assignment[a.subject], assignment[b.subject] = sb, sa
                    h2, s2 = _partition_score(groups, assignment, quota, totals,
                                              gender_targets, tolerance)
                    if (h2, s2) < (hard, soft):
                        hard, soft = h2, s2
                        swapped = True
                        break
                    assignment[a.subject], assignment[b.subject] = sa, sb
                if swapped:
                    break
            if not swapped:
                break
    if hard != 0:
        raise PartitionError("could not satisfy partition constraints "
                             f"(violation score {hard})")
    for g in groups:
        for v in g.videos:
            v.split = SPLITS[assignment[g.subject]]
    return {v.video: v.split for v in videos}


# ---------------------------------------------------------------------------
# Distribution statistics


def label_histogram(values, bins=40):
    """Histogram rows (bin_low, bin_high, count) over the raw label range;
    the final bin is closed so +1000 is counted."""
    counts, edges = np.histogram(np.asarray(values), bins=bins,
                                 range=(VALUE_MIN, VALUE_MAX))
    return [(float(edges[i]), float(edges[i + 1]), int(counts[i]))
            for i in range(bins)]


def write_stats(valence_values, arousal_values, out_dir, bins=40,
                scatter_limit=2000, seed=0):
    """Emit per-dimension histogram CSVs plus a scatter sample CSV."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if len(valence_values) == 0:
        raise CorpusError("empty split")
    paths = []
    for name, values in (("valence", valence_values), ("arousal", arousal_values)):
        path = out_dir / f"hist_{name}.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bin_low", "bin_high", "count"])
            for row in label_histogram(values, bins):
                writer.writerow(row)
        paths.append(path)
    rng = np.random.default_rng(seed)
    n = len(valence_values)
    pick = rng.permutation(n)[:scatter_limit]
    scatter = out_dir / "scatter.csv"
    with open(scatter, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["valence", "arousal"])
        for i in sorted(pick):
            writer.writerow([int(valence_values[i]), int(arousal_values[i])])
    paths.append(scatter)
    return paths
