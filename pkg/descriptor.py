import csv
import hashlib
import json
import logging
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Literal, NamedTuple, Optional, Sequence, TextIO, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from imagecore import RasterImage, load_image, resize_bilinear, sobel_field
from lbp import DEFAULT_SCALES, CodeImage, NeighborhoodSpec, UniformTable, build_uniform_table, encode_image
from netmeasures import DEFAULT_EC_MAX_ITER, DEFAULT_EC_TOL, MeasureKind, compute_measures
from pixelgraph import GraphParams, build_graphs

logger = logging.getLogger(__name__)

FAMILIES = ('TI', 'GI', 'CC', 'IDC', 'ODC', 'EC')


class DescriptorConfig(BaseModel):
    """Everything that determines a CN-LBP vector"""
    model_config = ConfigDict(frozen=True)

    graph: GraphParams = GraphParams()
    scales: Tuple[NeighborhoodSpec, ...] = DEFAULT_SCALES
    normalize: bool = True
    resize_to: Optional[Tuple[int, int]] = (128, 128)
    ec_tol: float = Field(DEFAULT_EC_TOL, gt=0)
    ec_max_iter: int = Field(DEFAULT_EC_MAX_ITER, ge=1)
    ec_direction: Literal['in', 'out'] = 'in'
    families: Tuple[str, ...] = FAMILIES

    @field_validator('scales')
    @classmethod
    def check_scales(cls, scales):
        if not scales:
            raise ValueError("at least one scale is required")
        return scales

    @field_validator('families')
    @classmethod
    def check_families(cls, families):
        if not families:
            raise ValueError("at least one family is required")
        unknown = [f for f in families if f not in FAMILIES]
        if unknown:
            raise ValueError(f"unknown families {unknown}, expected a subset of {list(FAMILIES)}")
        if len(set(families)) != len(families):
            raise ValueError(f"repeated families in {list(families)}")
        return tuple(f for f in FAMILIES if f in families)

    @field_validator('resize_to')
    @classmethod
    def check_resize(cls, size):
        if size is not None and (size[0] < 1 or size[1] < 1):
            raise ValueError(f"resize target must be at least 1x1, got {size}")
        return size


def config_digest(cfg: DescriptorConfig) -> str:
    return hashlib.sha256(cfg.model_dump_json().encode('utf-8')).hexdigest()[:16]


class SegmentLayout(NamedTuple):
    family: str
    P: int
    R: float
    band: int
    offset: int
    bin_count: int

    def column_names(self) -> List[str]:
        return [f"{self.family}_{self.P}_{self.R:g}_{self.band}_{b}" for b in range(self.bin_count)]


@dataclass(frozen=True, eq=False)
class FeatureVector:
    values: np.ndarray
    layout: Tuple[SegmentLayout, ...]

    def __len__(self):
        return len(self.values)

    def segment(self, family: str, P: int, R: float, band: int) -> np.ndarray:
        for seg in self.layout:
            if (seg.family, seg.P, seg.R, seg.band) == (family, P, R, band):
                return self.values[seg.offset:seg.offset + seg.bin_count]
        raise KeyError(f"No segment {family} P={P} R={R} band={band}")

    def column_names(self) -> List[str]:
        return [name for seg in self.layout for name in seg.column_names()]


def expected_length(bands: int, scales: Iterable[NeighborhoodSpec], families: Sequence[str] = FAMILIES) -> int:
    return len(families) * bands * sum(spec.bin_count for spec in scales)


def compute_map_families(img: RasterImage, cfg: DescriptorConfig) -> 'OrderedDict[str, List[np.ndarray]]':
    """Per-band planes of every configured family, in TI, GI, CC, IDC, ODC, EC order"""
    families = OrderedDict((name, []) for name in cfg.families)
    if 'TI' in families:
        families['TI'] = [img.band(b) for b in range(img.bands)]
    if families.keys() == {'TI'}:
        return families

    field = sobel_field(img)
    if 'GI' in families:
        families['GI'] = [field.magnitude[:, :, b] for b in range(img.bands)]

    kinds = [MeasureKind(name) for name in families if name not in ('TI', 'GI')]
    if not kinds:
        return families
    for b, graph in enumerate(build_graphs(img, field, cfg.graph)):
        measures = compute_measures(graph, kinds, ec_tol=cfg.ec_tol,
                                    ec_max_iter=cfg.ec_max_iter, ec_direction=cfg.ec_direction)
        for kind in kinds:
            families[kind.value].append(measures[kind].values)
        logger.debug(f"Band {b}: {graph.edge_count} edges")
    return families


def histogram(code_img: CodeImage, table: UniformTable, normalize: bool = True) -> np.ndarray:
    """Uniform-pattern histogram over the valid pixels"""
    if code_img.spec.P != table.P:
        raise ValueError(f"code image has P={code_img.spec.P} but table has P={table.P}")
    codes = code_img.valid_codes()
    counts = np.bincount(table.bin_of(codes), minlength=table.bin_count).astype(np.float64)
    if normalize and len(codes):
        counts /= len(codes)
    return counts


class CNLBPExtractor:
    """Turns images into CN-LBP feature vectors for one configuration"""

    def __init__(self, config: Optional[DescriptorConfig] = None):
        self.config = config or DescriptorConfig()
        self.digest = config_digest(self.config)
        self.tables = {spec.P: build_uniform_table(spec.P) for spec in self.config.scales}

    def prepare(self, img: RasterImage) -> RasterImage:
        if self.config.resize_to is None:
            return img
        w, h = self.config.resize_to
        return resize_bilinear(img, w, h)

    def extract(self, img: RasterImage) -> FeatureVector:
        img = self.prepare(img)
        families = compute_map_families(img, self.config)

        segments = []
        layout = []
        offset = 0
        for family, planes in families.items():
            for spec in self.config.scales:
                table = self.tables[spec.P]
                for b, plane in enumerate(planes):
                    hist = histogram(encode_image(plane, spec), table, self.config.normalize)
                    segments.append(hist)
                    layout.append(SegmentLayout(family, spec.P, spec.R, b, offset, len(hist)))
                    offset += len(hist)

        return FeatureVector(values=np.concatenate(segments), layout=tuple(layout))

    def extract_file(self, path: Union[str, Path]) -> FeatureVector:
        return self.extract(load_image(path))


def extract(img: RasterImage, cfg: Optional[DescriptorConfig] = None) -> FeatureVector:
    return CNLBPExtractor(cfg).extract(img)


class ExtractionRecord(NamedTuple):
    path: str
    label: Optional[str]
    vector: FeatureVector


def write_jsonl(records: Iterable[ExtractionRecord], digest: str, stream: TextIO) -> int:
    """One JSON object per image; returns the record count"""
    count = 0
    for record in records:
        obj = {
            'path': record.path,
            'label': record.label,
            'config_digest': digest,
            'vector': record.vector.values.tolist(),
        }
        stream.write(json.dumps(obj) + '\n')
        count += 1
    return count


def write_csv(records: Iterable[ExtractionRecord], digest: str, stream: TextIO) -> int:
    """Header row of segment column names, one row per image.

    Every record must share the first record's layout.
    """
    writer = csv.writer(stream, lineterminator='\n')
    layout = None
    count = 0
    for record in records:
        if layout is None:
            layout = record.vector.layout
            writer.writerow(['path', 'label', 'config_digest'] + record.vector.column_names())
        elif record.vector.layout != layout:
            raise ValueError(f"{record.path}: segment layout differs from the first image in the batch")
        writer.writerow([record.path, record.label or '', digest] + [repr(v) for v in record.vector.values.tolist()])
        count += 1
    return count


def read_jsonl(stream: TextIO) -> List[Dict]:
    """Parse a JSON-lines feature file back into dicts with numpy vectors"""
    rows = []
    for line in stream:
        line = line.strip()
        if not line:
            continue
        obj = json.loads(line)
        obj['vector'] = np.asarray(obj['vector'], dtype=np.float64)
        rows.append(obj)
    return rows
