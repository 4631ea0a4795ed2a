//! Hyperspectral cubes, ground-truth rasters and labeled pixel sets.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::npy::{read_npy, write_npy, NpyArray, NpyData};

/// Which image variant a cube holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CubeKind {
    Original,
    Noisy,
    Smoothed,
}

/// An `H × W × M` image, stored row-major with the band index fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCube {
    height: usize,
    width: usize,
    bands: usize,
    data: Vec<f32>,
    kind: CubeKind,
}

impl SpectralCube {
    pub fn new(
        height: usize,
        width: usize,
        bands: usize,
        data: Vec<f32>,
        kind: CubeKind,
    ) -> Result<Self> {
        if data.len() != height * width * bands {
            return Err(Error::Shape(format!(
                "cube data has {} values, expected {height}x{width}x{bands}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite value at flat index {pos}")));
        }
        Ok(Self {
            height,
            width,
            bands,
            data,
            kind,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn kind(&self) -> CubeKind {
        self.kind
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn spectrum(&self, pixel: PixelIndex) -> &[f32] {
        let start = (pixel.row * self.width + pixel.col) * self.bands;
        &self.data[start..start + self.bands]
    }

    /// Builds a cube of another kind that shares this cube's geometry.
    pub(crate) fn derived(&self, data: Vec<f32>, kind: CubeKind) -> Self {
        debug_assert_eq!(data.len(), self.data.len());
        Self {
            height: self.height,
            width: self.width,
            bands: self.bands,
            data,
            kind,
        }
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }
}

/// Per-pixel class ids; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    height: usize,
    width: usize,
    labels: Vec<u32>,
}

impl GroundTruth {
    pub fn new(height: usize, width: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::Shape(format!(
                "ground truth has {} labels, expected {height}x{width}",
                labels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label(&self, pixel: PixelIndex) -> u32 {
        self.labels[pixel.row * self.width + pixel.col]
    }

    /// Largest label present, i.e. the inferred class count.
    pub fn num_classes(&self) -> usize {
        self.labels.iter().copied().max().unwrap_or(0) as usize
    }

    pub fn contains(&self, pixel: PixelIndex) -> bool {
        pixel.row < self.height && pixel.col < self.width
    }

    /// Foreground pixel count per class, indexed `class - 1`.
    pub fn class_totals(&self) -> Vec<usize> {
        let mut totals = vec![0; self.num_classes()];
        for &l in self.labels.iter().filter(|&&l| l > 0) {
            totals[l as usize - 1] += 1;
        }
        totals
    }
}

/// A cube paired with its ground truth.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub cube: SpectralCube,
    pub gt: GroundTruth,
    pub num_classes: usize,
    pub class_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(cube: SpectralCube, gt: GroundTruth) -> Result<Self> {
        if cube.height() != gt.height() || cube.width() != gt.width() {
            return Err(Error::Validation(format!(
                "cube is {}x{} but ground truth is {}x{}",
                cube.height(),
                cube.width(),
                gt.height(),
                gt.width()
            )));
        }
        let totals = gt.class_totals();
        if totals.is_empty() {
            return Err(Error::Validation(
                "ground truth has no foreground pixels".into(),
            ));
        }
        if let Some(k) = totals.iter().position(|&c| c == 0) {
            return Err(Error::Validation(format!(
                "class {} has no pixels (labels must be contiguous 1..={})",
                k + 1,
                totals.len()
            )));
        }
        Ok(Self {
            num_classes: totals.len(),
            cube,
            gt,
            class_names: None,
        })
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.num_classes {
            return Err(Error::Validation(format!(
                "{} class names given for {} classes",
                names.len(),
                self.num_classes
            )));
        }
        self.class_names = Some(names);
        Ok(self)
    }

    pub fn load(cube_path: impl AsRef<Path>, gt_path: impl AsRef<Path>) -> Result<Self> {
        Self::new(load_cube(cube_path)?, load_ground_truth(gt_path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PixelIndex {
    pub row: usize,
    pub col: usize,
}

impl PixelIndex {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    /// The in-bounds members of the 8-pixel Moore neighborhood.
    pub fn moore_neighbors(self, height: usize, width: usize) -> impl Iterator<Item = PixelIndex> {
        const OFFSETS: [(isize, isize); 8] = [
            (-1, -1),
            (-1, 0),
            (-1, 1),
            (0, -1),
            (0, 1),
            (1, -1),
            (1, 0),
            (1, 1),
        ];
        OFFSETS.into_iter().filter_map(move |(dr, dc)| {
            let r = self.row as isize + dr;
            let c = self.col as isize + dc;
            (r >= 0 && c >= 0 && (r as usize) < height && (c as usize) < width)
                .then(|| PixelIndex::new(r as usize, c as usize))
        })
    }
}

impl fmt::Display for PixelIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Sampled,
    LabelAugmented,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Sampled => "sampled",
            Provenance::LabelAugmented => "label_augmented",
        }
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sampled" => Ok(Provenance::Sampled),
            "label_augmented" => Ok(Provenance::LabelAugmented),
            other => Err(Error::Format(format!("unknown provenance '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LabeledEntry {
    pub pixel: PixelIndex,
    pub label: u32,
    pub provenance: Provenance,
}

impl LabeledEntry {
    pub fn sampled(pixel: PixelIndex, label: u32) -> Self {
        Self {
            pixel,
            label,
            provenance: Provenance::Sampled,
        }
    }
}

/// An ordered multiset of labeled pixels.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabeledSet {
    pub entries: Vec<LabeledEntry>,
}

impl LabeledSet {
    pub fn new(entries: Vec<LabeledEntry>) -> Self {
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, LabeledEntry> {
        self.entries.iter()
    }

    pub fn pixels(&self) -> impl Iterator<Item = PixelIndex> + '_ {
        self.entries.iter().map(|e| e.pixel)
    }

    pub fn sampled_only(&self) -> LabeledSet {
        LabeledSet::new(
            self.entries
                .iter()
                .filter(|e| e.provenance == Provenance::Sampled)
                .copied()
                .collect(),
        )
    }

    /// Checks label range, bounds, and that sampled entries are unique.
    pub fn validate(&self, num_classes: usize, height: usize, width: usize) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for e in &self.entries {
            if e.label == 0 || e.label as usize > num_classes {
                return Err(Error::Validation(format!(
                    "label {} at {} outside 1..={num_classes}",
                    e.label, e.pixel
                )));
            }
            if e.pixel.row >= height || e.pixel.col >= width {
                return Err(Error::Validation(format!(
                    "pixel {} outside {height}x{width} image",
                    e.pixel
                )));
            }
            if e.provenance == Provenance::Sampled && !seen.insert(e.pixel) {
                return Err(Error::Validation(format!(
                    "sampled pixel {} appears twice",
                    e.pixel
                )));
            }
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "row,col,label,provenance")?;
        for e in &self.entries {
            writeln!(
                w,
                "{},{},{},{}",
                e.pixel.row,
                e.pixel.col,
                e.label,
                e.provenance.as_str()
            )?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        match lines.next() {
            Some(Ok(h)) if h.trim() == "row,col,label,provenance" => {}
            _ => {
                return Err(Error::Format(
                    "expected header row,col,label,provenance".into(),
                ))
            }
        }
        let mut entries = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::Format(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.trim().split(',').collect();
            let bad = || Error::Format(format!("line {}: malformed entry '{line}'", n + 2));
            if fields.len() != 4 {
                return Err(bad());
            }
            entries.push(LabeledEntry {
                pixel: PixelIndex::new(
                    fields[0].parse().map_err(|_| bad())?,
                    fields[1].parse().map_err(|_| bad())?,
                ),
                label: fields[2].parse().map_err(|_| bad())?,
                provenance: fields[3].parse()?,
            });
        }
        Ok(Self { entries })
    }
}

impl<'a> IntoIterator for &'a LabeledSet {
    type Item = &'a LabeledEntry;
    type IntoIter = std::slice::Iter<'a, LabeledEntry>;

    fn into_iter(self) -> Self::IntoIter {
        self.entries.iter()
    }
}

pub fn load_cube(path: impl AsRef<Path>) -> Result<SpectralCube> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let array = read_npy(&mut BufReader::new(file))?;
    if array.shape.len() != 3 {
        return Err(Error::Shape(format!(
            "cube must be 3-D, got shape {:?}",
            array.shape
        )));
    }
    let data = match array.data {
        NpyData::F32(v) => v,
        NpyData::F64(v) => v.into_iter().map(|x| x as f32).collect(),
        other => {
            return Err(Error::Shape(format!(
                "cube dtype must be f4 or f8, got {}",
                other.dtype().descr()
            )))
        }
    };
    let (h, w, m) = (array.shape[0], array.shape[1], array.shape[2]);
    SpectralCube::new(h, w, m, data, CubeKind::Original)
}

pub fn write_cube(path: impl AsRef<Path>, cube: &SpectralCube) -> Result<()> {
    let array = NpyArray {
        shape: vec![cube.height, cube.width, cube.bands],
        data: NpyData::F32(cube.data.clone()),
    };
    write_array(path.as_ref(), &array)
}

pub fn load_ground_truth(path: impl AsRef<Path>) -> Result<GroundTruth> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let array = read_npy(&mut BufReader::new(file))?;
    if array.shape.len() != 2 {
        return Err(Error::Shape(format!(
            "ground truth must be 2-D, got shape {:?}",
            array.shape
        )));
    }
    let labels = match array.data {
        NpyData::U8(v) => v.into_iter().map(u32::from).collect(),
        NpyData::U16(v) => v.into_iter().map(u32::from).collect(),
        NpyData::U32(v) => v,
        other => {
            return Err(Error::Shape(format!(
                "ground truth dtype must be unsigned integer, got {}",
                other.dtype().descr()
            )))
        }
    };
    GroundTruth::new(array.shape[0], array.shape[1], labels)
}

/// Writes the raster using the narrowest unsigned type that holds every label.
pub fn write_ground_truth(path: impl AsRef<Path>, gt: &GroundTruth) -> Result<()> {
    let max = gt.labels.iter().copied().max().unwrap_or(0);
    let data = if max <= u8::MAX as u32 {
        NpyData::U8(gt.labels.iter().map(|&l| l as u8).collect())
    } else if max <= u16::MAX as u32 {
        NpyData::U16(gt.labels.iter().map(|&l| l as u16).collect())
    } else {
        NpyData::U32(gt.labels.clone())
    };
    let array = NpyArray {
        shape: vec![gt.height, gt.width],
        data,
    };
    write_array(path.as_ref(), &array)
}

fn write_array(path: &Path, array: &NpyArray) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_npy(&mut w, array)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Foreground pixels in row-major order.
pub fn foreground_indices(gt: &GroundTruth) -> Vec<PixelIndex> {
    gt.labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l > 0)
        .map(|(i, _)| PixelIndex::new(i / gt.width, i % gt.width))
        .collect()
}

/// Multiplicity of each class `1..=k` in `labeled`, indexed `class - 1`.
pub fn class_counts(labeled: &LabeledSet, k: usize) -> Vec<usize> {
    let mut counts = vec![0; k];
    for e in labeled {
        counts[e.label as usize - 1] += 1;
    }
    counts
}
