//! On-disk formats and sampling helpers.
//!
//! * `DELF`: binary feature matrix. Header (little-endian): magic `DELF`,
//!   `u16` version = 1, `u8` dtype (0 = f32, 1 = f64), `u8` reserved = 0,
//!   `u64` n, `u64` d, then the row-major payload. Sample ids live in a
//!   sidecar `<path>.ids` file with one UTF-8 id per line; when the sidecar
//!   is absent the ids are the row indices.
//! * `DELM`: binary feature-map block with the same header layout plus a
//!   third `u64` (spatial cells per map); payload is sample-major, then
//!   channel, then cell.
//! * Feature CSV: `id,v_1,...,v_d`, no header unless asked for.
//! * Label manifest CSV: `id,style,genre` with a header; empty cell means
//!   unlabeled.
//! * Assignment CSV: `id,cluster,q_0,...,q_{k-1}` with a header.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub const FEATURE_MAGIC: &[u8; 4] = b"DELF";
pub const MAP_MAGIC: &[u8; 4] = b"DELM";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Dtype::F32),
            1 => Some(Dtype::F64),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureFormat {
    Binary(Dtype),
    Csv { header: bool },
}

impl FeatureFormat {
    /// Guess the format from a file extension: `.csv` is CSV, anything else
    /// is DELF (f64 when writing).
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => FeatureFormat::Csv { header: false },
            _ => FeatureFormat::Binary(Dtype::F64),
        }
    }
}

/// An n×d matrix of sample descriptors with one id per row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    ids: Vec<String>,
    values: Array2<f64>,
}

impl FeatureMatrix {
    pub fn new(ids: Vec<String>, values: Array2<f64>) -> Result<Self> {
        let (n, d) = values.dim();
        if n == 0 || d == 0 {
            return Err(Error::Data(format!(
                "feature matrix must be non-empty, got {n}x{d}"
            )));
        }
        if ids.len() != n {
            return Err(Error::Shape(format!("{} ids for {n} rows", ids.len())));
        }
        if let Some(((row, col), v)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite value {v} at row {row}, column {col}"
            )));
        }
        let mut seen = HashSet::with_capacity(n);
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::Data(format!("duplicate sample id {id:?}")));
            }
        }
        Ok(Self { ids, values })
    }

    /// Build a matrix whose ids are the row indices.
    pub fn from_values(values: Array2<f64>) -> Result<Self> {
        let ids = (0..values.nrows()).map(|i| i.to_string()).collect();
        Self::new(ids, values)
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn d(&self) -> usize {
        self.values.ncols()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn into_parts(self) -> (Vec<String>, Array2<f64>) {
        (self.ids, self.values)
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let ids = indices.iter().map(|&i| self.ids[i].clone()).collect();
        Self::new(ids, self.values.select(Axis(0), indices))
    }

    fn has_index_ids(&self) -> bool {
        self.ids
            .iter()
            .enumerate()
            .all(|(i, id)| *id == i.to_string())
    }
}

/// Per-sample stacks of spatial feature maps (n × channels × cells).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMapBlock {
    pub ids: Vec<String>,
    pub values: Array3<f64>,
}

impl FeatureMapBlock {
    pub fn new(ids: Vec<String>, values: Array3<f64>) -> Result<Self> {
        if ids.len() != values.dim().0 {
            return Err(Error::Shape(format!(
                "{} ids for {} samples",
                ids.len(),
                values.dim().0
            )));
        }
        if let Some(((i, c, s), v)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite value {v} at sample {i}, channel {c}, cell {s}"
            )));
        }
        Ok(Self { ids, values })
    }
}

pub fn read_features(path: &Path, format: FeatureFormat) -> Result<FeatureMatrix> {
    match format {
        FeatureFormat::Binary(_) => read_delf(path),
        FeatureFormat::Csv { header } => read_feature_csv(path, header),
    }
}

pub fn write_features(matrix: &FeatureMatrix, path: &Path, format: FeatureFormat) -> Result<()> {
    match format {
        FeatureFormat::Binary(dtype) => write_delf(matrix, path, dtype),
        FeatureFormat::Csv { header } => write_feature_csv(matrix, path, header),
    }
}

fn ids_sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".ids");
    PathBuf::from(s)
}

struct Header {
    dtype: Dtype,
    dims: Vec<u64>,
}

const PREFIX_LEN: u64 = 8;

fn read_header(reader: &mut impl Read, magic: &[u8; 4], ndims: usize) -> Result<Header> {
    let mut prefix = [0u8; PREFIX_LEN as usize];
    reader
        .read_exact(&mut prefix)
        .map_err(|_| Error::at_byte(0, "file shorter than header"))?;
    if &prefix[..4] != magic {
        return Err(Error::at_byte(
            0,
            format!(
                "bad magic {:?}, expected {:?}",
                &prefix[..4],
                std::str::from_utf8(magic).unwrap()
            ),
        ));
    }
    let version = u16::from_le_bytes([prefix[4], prefix[5]]);
    if version != FORMAT_VERSION {
        return Err(Error::at_byte(4, format!("unsupported version {version}")));
    }
    let dtype = Dtype::from_code(prefix[6])
        .ok_or_else(|| Error::at_byte(6, format!("unknown dtype code {}", prefix[6])))?;
    if prefix[7] != 0 {
        return Err(Error::at_byte(
            7,
            format!("reserved byte is {}, expected 0", prefix[7]),
        ));
    }
    let mut dims = Vec::with_capacity(ndims);
    for k in 0..ndims {
        let offset = PREFIX_LEN + 8 * k as u64;
        let mut buf = [0u8; 8];
        reader
            .read_exact(&mut buf)
            .map_err(|_| Error::at_byte(offset, "file shorter than header"))?;
        let v = u64::from_le_bytes(buf);
        if v == 0 {
            return Err(Error::at_byte(offset, "dimension must be at least 1"));
        }
        dims.push(v);
    }
    Ok(Header { dtype, dims })
}

fn write_header(
    w: &mut impl Write,
    magic: &[u8; 4],
    dtype: Dtype,
    dims: &[u64],
) -> std::io::Result<()> {
    w.write_all(magic)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&[dtype.code(), 0])?;
    for d in dims {
        w.write_all(&d.to_le_bytes())?;
    }
    Ok(())
}

fn read_payload(
    reader: &mut impl Read,
    dtype: Dtype,
    count: usize,
    offset: u64,
) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; count * dtype.width()];
    reader.read_exact(&mut bytes).map_err(|_| {
        Error::at_byte(
            offset,
            format!("payload truncated, expected {} bytes", bytes.len()),
        )
    })?;
    let mut rest = [0u8; 1];
    if reader
        .read(&mut rest)
        .map_err(|e| Error::at_byte(offset, e.to_string()))?
        != 0
    {
        return Err(Error::at_byte(
            offset + bytes.len() as u64,
            "trailing bytes after payload",
        ));
    }
    Ok(match dtype {
        Dtype::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        Dtype::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    })
}

fn write_payload<'a>(
    w: &mut impl Write,
    dtype: Dtype,
    values: impl Iterator<Item = &'a f64>,
) -> std::io::Result<()> {
    for &v in values {
        match dtype {
            Dtype::F32 => w.write_all(&(v as f32).to_le_bytes())?,
            Dtype::F64 => w.write_all(&v.to_le_bytes())?,
        }
    }
    Ok(())
}

fn check_representable<'a>(dtype: Dtype, values: impl Iterator<Item = &'a f64>) -> Result<()> {
    if dtype == Dtype::F32 {
        if let Some((i, v)) = values.enumerate().find(|(_, v)| (**v as f32).is_infinite()) {
            return Err(Error::Data(format!(
                "value {v} at element {i} overflows f32"
            )));
        }
    }
    Ok(())
}

fn dims_to_usize(dims: &[u64], width: usize) -> Result<Vec<usize>> {
    let mut total: usize = width;
    let mut out = Vec::with_capacity(dims.len());
    for (k, &d) in dims.iter().enumerate() {
        let d = usize::try_from(d)
            .map_err(|_| Error::at_byte(PREFIX_LEN + 8 * k as u64, "dimension too large"))?;
        total = total
            .checked_mul(d)
            .ok_or_else(|| Error::at_byte(PREFIX_LEN + 8 * k as u64, "payload size overflows"))?;
        out.push(d);
    }
    Ok(out)
}

fn read_ids(path: &Path, n: usize) -> Result<Vec<String>> {
    let sidecar = ids_sidecar(path);
    if !sidecar.exists() {
        return Ok((0..n).map(|i| i.to_string()).collect());
    }
    let file = File::open(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
    let ids: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(&sidecar, e))?;
    if ids.len() != n {
        return Err(Error::Data(format!(
            "{} lists {} ids but the matrix has {n} rows",
            sidecar.display(),
            ids.len()
        )));
    }
    Ok(ids)
}

fn write_ids(path: &Path, ids: &[String], index_ids: bool) -> Result<()> {
    let sidecar = ids_sidecar(path);
    if index_ids {
        if sidecar.exists() {
            std::fs::remove_file(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
        }
        return Ok(());
    }
    if let Some(bad) = ids.iter().find(|id| id.contains('\n') || id.contains('\r')) {
        return Err(Error::Data(format!(
            "sample id {bad:?} contains a line break"
        )));
    }
    let file = File::create(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
    let mut w = BufWriter::new(file);
    for id in ids {
        writeln!(w, "{id}").map_err(|e| Error::io(&sidecar, e))?;
    }
    w.flush().map_err(|e| Error::io(&sidecar, e))
}

fn read_delf(path: &Path) -> Result<FeatureMatrix> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let decode = |reader: &mut BufReader<File>| {
        let header = read_header(reader, FEATURE_MAGIC, 2)?;
        let dims = dims_to_usize(&header.dims, header.dtype.width())?;
        let (n, d) = (dims[0], dims[1]);
        let data = read_payload(reader, header.dtype, n * d, PREFIX_LEN + 16)?;
        Ok(Array2::from_shape_vec((n, d), data).expect("payload length checked"))
    };
    let values = decode(&mut reader).map_err(|e: Error| e.in_file(path))?;
    FeatureMatrix::new(read_ids(path, values.nrows())?, values)
}

fn write_delf(matrix: &FeatureMatrix, path: &Path, dtype: Dtype) -> Result<()> {
    check_representable(dtype, matrix.values.iter())?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_header(
        &mut w,
        FEATURE_MAGIC,
        dtype,
        &[matrix.n() as u64, matrix.d() as u64],
    )
    .and_then(|_| write_payload(&mut w, dtype, matrix.values.iter()))
    .and_then(|_| w.flush())
    .map_err(|e| Error::io(path, e))?;
    write_ids(path, &matrix.ids, matrix.has_index_ids())
}

pub fn read_feature_maps(path: &Path) -> Result<FeatureMapBlock> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let decode = |reader: &mut BufReader<File>| {
        let header = read_header(reader, MAP_MAGIC, 3)?;
        let dims = dims_to_usize(&header.dims, header.dtype.width())?;
        let (n, c, s) = (dims[0], dims[1], dims[2]);
        let data = read_payload(reader, header.dtype, n * c * s, PREFIX_LEN + 24)?;
        Ok(Array3::from_shape_vec((n, c, s), data).expect("payload length checked"))
    };
    let values = decode(&mut reader).map_err(|e: Error| e.in_file(path))?;
    FeatureMapBlock::new(read_ids(path, values.dim().0)?, values)
}

pub fn write_feature_maps(block: &FeatureMapBlock, path: &Path, dtype: Dtype) -> Result<()> {
    let (n, c, s) = block.values.dim();
    check_representable(dtype, block.values.iter())?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_header(&mut w, MAP_MAGIC, dtype, &[n as u64, c as u64, s as u64])
        .and_then(|_| write_payload(&mut w, dtype, block.values.iter()))
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))?;
    let index_ids = block
        .ids
        .iter()
        .enumerate()
        .all(|(i, id)| *id == i.to_string());
    write_ids(path, &block.ids, index_ids)
}

fn csv_reader(path: &Path, header: bool) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(header)
        .flexible(true)
        .from_reader(file))
}

fn csv_error(path: &Path, err: csv::Error) -> Error {
    let line = err.position().map(|p| p.line()).unwrap_or(0);
    match err.into_kind() {
        csv::ErrorKind::Io(e) => Error::io(path, e),
        other => Error::at_line(path, line, format!("{other:?}")),
    }
}

fn read_feature_csv(path: &Path, header: bool) -> Result<FeatureMatrix> {
    let mut reader = csv_reader(path, header)?;
    let mut ids = Vec::new();
    let mut data = Vec::new();
    let mut d = None;
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record
            .position()
            .map(|p| p.line())
            .unwrap_or(row as u64 + 1);
        let width = record.len().saturating_sub(1);
        if width == 0 {
            return Err(Error::at_line(path, line, "row has no feature columns"));
        }
        match d {
            None => d = Some(width),
            Some(d) if d != width => {
                return Err(Error::at_line(
                    path,
                    line,
                    format!("expected {d} values, found {width}"),
                ));
            }
            _ => {}
        }
        ids.push(record[0].to_string());
        for (col, field) in record.iter().skip(1).enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::at_line(
                    path,
                    line,
                    format!("column {}: {field:?} is not a number", col + 1),
                )
            })?;
            if !v.is_finite() {
                return Err(Error::Data(format!(
                    "non-finite value {v} at row {row}, column {col}"
                )));
            }
            data.push(v);
        }
    }
    let d = d.ok_or_else(|| Error::at_line(path, 1, "no data rows"))?;
    let values = Array2::from_shape_vec((ids.len(), d), data).expect("row widths checked");
    FeatureMatrix::new(ids, values)
}

fn write_feature_csv(matrix: &FeatureMatrix, path: &Path, header: bool) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let err = |e: csv::Error| csv_error(path, e);
    if header {
        let mut names = vec!["id".to_string()];
        names.extend((0..matrix.d()).map(|j| format!("f_{j}")));
        w.write_record(&names).map_err(err)?;
    }
    for (id, row) in matrix.ids.iter().zip(matrix.values.rows()) {
        let mut record = Vec::with_capacity(row.len() + 1);
        record.push(id.clone());
        record.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&record).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Collapse each channel's spatial cells to their mean.
pub fn global_average_pool(block: &FeatureMapBlock) -> Result<FeatureMatrix> {
    let (_, _, s) = block.values.dim();
    if s == 0 {
        return Err(Error::Data("feature maps have no spatial cells".into()));
    }
    let pooled = block
        .values
        .map_axis(Axis(2), |cells| cells.iter().sum::<f64>() / s as f64);
    FeatureMatrix::new(block.ids.clone(), pooled)
}

/// A categorical labeling of samples with classes numbered densely from 0
/// in sorted order of their names.
#[derive(Debug, Clone, PartialEq)]
pub struct Labeling {
    pub classes: Vec<String>,
    pub by_id: HashMap<String, usize>,
}

impl Labeling {
    fn from_pairs(pairs: Vec<(String, String)>) -> Self {
        let classes: Vec<String> = pairs
            .iter()
            .map(|(_, c)| c.clone())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        let index: HashMap<&str, usize> = classes
            .iter()
            .enumerate()
            .map(|(i, c)| (c.as_str(), i))
            .collect();
        let by_id = pairs
            .iter()
            .map(|(id, c)| (id.clone(), index[c.as_str()]))
            .collect();
        Self { classes, by_id }
    }

    /// Build from per-sample class indices (ids are the given strings).
    pub fn from_indices(ids: &[String], labels: &[usize]) -> Self {
        let pairs = ids
            .iter()
            .zip(labels)
            .map(|(id, &l)| (id.clone(), format!("{l:06}")))
            .collect();
        Self::from_pairs(pairs)
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelManifest {
    pub ids: Vec<String>,
    pub style: Labeling,
    pub genre: Labeling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelColumn {
    Style,
    Genre,
}

impl LabelManifest {
    pub fn column(&self, column: LabelColumn) -> &Labeling {
        match column {
            LabelColumn::Style => &self.style,
            LabelColumn::Genre => &self.genre,
        }
    }

    /// Check that every labeled id exists in `features`.
    pub fn check_against(&self, features: &FeatureMatrix) -> Result<()> {
        let known: HashSet<&str> = features.ids().iter().map(String::as_str).collect();
        match self.ids.iter().find(|id| !known.contains(id.as_str())) {
            Some(id) => Err(Error::Data(format!(
                "manifest id {id:?} has no feature row"
            ))),
            None => Ok(()),
        }
    }
}

pub fn read_label_manifest(path: &Path) -> Result<LabelManifest> {
    let mut reader = csv_reader(path, true)?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let id_col = col("id").ok_or_else(|| Error::at_line(path, 1, "missing `id` column"))?;
    let style_col = col("style");
    let genre_col = col("genre");
    let mut ids = Vec::new();
    let mut seen = HashSet::new();
    let mut style = Vec::new();
    let mut genre = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let id = record
            .get(id_col)
            .ok_or_else(|| Error::at_line(path, line, "missing id"))?
            .to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::Data(format!("duplicate manifest id {id:?}")));
        }
        let cell = |c: Option<usize>| {
            c.and_then(|c| record.get(c))
                .map(str::trim)
                .filter(|s| !s.is_empty())
        };
        if let Some(s) = cell(style_col) {
            style.push((id.clone(), s.to_string()));
        }
        if let Some(g) = cell(genre_col) {
            genre.push((id.clone(), g.to_string()));
        }
        ids.push(id);
    }
    Ok(LabelManifest {
        ids,
        style: Labeling::from_pairs(style),
        genre: Labeling::from_pairs(genre),
    })
}

pub fn write_label_manifest(
    path: &Path,
    ids: &[String],
    style: &[Option<String>],
    genre: &[Option<String>],
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let err = |e: csv::Error| csv_error(path, e);
    w.write_record(["id", "style", "genre"]).map_err(err)?;
    for ((id, s), g) in ids.iter().zip(style).zip(genre) {
        w.write_record([
            id.as_str(),
            s.as_deref().unwrap_or(""),
            g.as_deref().unwrap_or(""),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Hard cluster labels plus optional soft memberships, keyed by sample id.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignments {
    pub ids: Vec<String>,
    pub hard: Vec<usize>,
    pub q: Option<Array2<f64>>,
    pub k: usize,
}

impl ClusterAssignments {
    pub fn new(
        ids: Vec<String>,
        hard: Vec<usize>,
        q: Option<Array2<f64>>,
        k: usize,
    ) -> Result<Self> {
        if ids.len() != hard.len() {
            return Err(Error::Shape(format!(
                "{} ids for {} labels",
                ids.len(),
                hard.len()
            )));
        }
        if let Some(&bad) = hard.iter().find(|&&h| h >= k) {
            return Err(Error::Data(format!("cluster label {bad} outside [0, {k})")));
        }
        if let Some(q) = &q {
            if q.dim() != (hard.len(), k) {
                return Err(Error::Shape(format!(
                    "soft memberships are {:?}, expected ({}, {k})",
                    q.dim(),
                    hard.len()
                )));
            }
            for (i, row) in q.rows().into_iter().enumerate() {
                let s: f64 = row.sum();
                if (s - 1.0).abs() > 1e-9 {
                    return Err(Error::Data(format!("soft membership row {i} sums to {s}")));
                }
            }
        }
        Ok(Self { ids, hard, q, k })
    }

    /// Labels reordered to follow `ids`.
    pub fn aligned_to(&self, ids: &[String]) -> Result<Vec<usize>> {
        let index: HashMap<&str, usize> = self
            .ids
            .iter()
            .map(String::as_str)
            .zip(self.hard.iter().copied())
            .collect();
        ids.iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::Data(format!("no cluster assignment for id {id:?}")))
            })
            .collect()
    }
}

pub fn write_assignments(a: &ClusterAssignments, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let err = |e: csv::Error| csv_error(path, e);
    let mut header = vec!["id".to_string(), "cluster".to_string()];
    if a.q.is_some() {
        header.extend((0..a.k).map(|j| format!("q_{j}")));
    }
    w.write_record(&header).map_err(err)?;
    for (i, id) in a.ids.iter().enumerate() {
        let mut record = vec![id.clone(), a.hard[i].to_string()];
        if let Some(q) = &a.q {
            record.extend(q.row(i).iter().map(|v| v.to_string()));
        }
        w.write_record(&record).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_assignments(path: &Path) -> Result<ClusterAssignments> {
    let mut reader = csv_reader(path, true)?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if headers.get(0) != Some("id") || headers.get(1) != Some("cluster") {
        return Err(Error::at_line(
            path,
            1,
            "expected header `id,cluster[,q_0,...]`",
        ));
    }
    let k_soft = headers.len() - 2;
    let mut ids = Vec::new();
    let mut hard = Vec::new();
    let mut q = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != headers.len() {
            return Err(Error::at_line(
                path,
                line,
                format!("expected {} fields", headers.len()),
            ));
        }
        ids.push(record[0].to_string());
        hard.push(record[1].trim().parse().map_err(|_| {
            Error::at_line(path, line, format!("bad cluster index {:?}", &record[1]))
        })?);
        for field in record.iter().skip(2) {
            q.push(
                field
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| Error::at_line(path, line, format!("bad membership {field:?}")))?,
            );
        }
    }
    let n = ids.len();
    if k_soft > 0 {
        let q = Array2::from_shape_vec((n, k_soft), q).expect("row widths checked");
        ClusterAssignments::new(ids, hard, Some(q), k_soft)
    } else {
        let k = hard.iter().max().map_or(0, |m| m + 1);
        ClusterAssignments::new(ids, hard, None, k)
    }
}

/// Row indices of a stratified random sample: from each class, a random
/// `round(fraction * class_size)` subset. Returned indices are ascending.
pub fn stratified_indices(labels: &[usize], fraction: f64, rng: &mut Rng) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!(
            "sampling fraction must be in (0, 1], got {fraction}"
        )));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut chosen = Vec::new();
    for members in by_class.values_mut() {
        let take = (fraction * members.len() as f64).round() as usize;
        rng.shuffle(members);
        chosen.extend_from_slice(&members[..take.min(members.len())]);
    }
    chosen.sort_unstable();
    Ok(chosen)
}

/// Stratified subsample of `matrix`, with class membership looked up by id.
pub fn stratified_sample(
    matrix: &FeatureMatrix,
    labels: &Labeling,
    fraction: f64,
    rng: &mut Rng,
) -> Result<FeatureMatrix> {
    let per_row = matrix
        .ids()
        .iter()
        .map(|id| {
            labels
                .get(id)
                .ok_or_else(|| Error::Data(format!("sample {id:?} has no label")))
        })
        .collect::<Result<Vec<_>>>()?;
    let indices = stratified_indices(&per_row, fraction, rng)?;
    matrix.select(&indices)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array3};
    use tempfile::tempdir;

    fn random_matrix(n: usize, d: usize, seed: u64) -> FeatureMatrix {
        let mut rng = Rng::new(seed);
        let values = Array2::from_shape_simple_fn((n, d), || rng.normal(0.0, 3.0));
        FeatureMatrix::from_values(values).unwrap()
    }

    #[test]
    fn csv_parse() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("f.csv");
        std::fs::write(&path, "a,1,2,3\nb,4,5,6\n").unwrap();
        let m = read_features(&path, FeatureFormat::Csv { header: false }).unwrap();
        assert_eq!((m.n(), m.d()), (2, 3));
        assert_eq!(m.ids(), ["a", "b"]);
        assert_eq!(m.values(), array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
    }

    #[test]
    fn csv_header_skipped_on_request() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("f.csv");
        std::fs::write(&path, "id,x,y\na,1,2\n").unwrap();
        let m = read_features(&path, FeatureFormat::Csv { header: true }).unwrap();
        assert_eq!(m.values(), array![[1.0, 2.0]]);
        assert!(read_features(&path, FeatureFormat::Csv { header: false }).is_err());
    }

    #[test]
    fn csv_rejects_non_finite() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("f.csv");
        std::fs::write(&path, "a,1,2\nb,NaN,3\n").unwrap();
        let err = read_features(&path, FeatureFormat::Csv { header: false }).unwrap_err();
        assert!(
            matches!(err, Error::Data(ref m) if m.contains("row 1, column 0")),
            "{err}"
        );
    }

    #[test]
    fn delf_single_row_bytes() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("one.delf");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"DELF");
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&[1, 0]);
        bytes.extend_from_slice(&1u64.to_le_bytes());
        bytes.extend_from_slice(&4u64.to_le_bytes());
        for v in [1.0f64, 2.0, 3.0, 4.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(&path, &bytes).unwrap();
        let m = read_features(&path, FeatureFormat::Binary(Dtype::F64)).unwrap();
        assert_eq!(m.values(), array![[1.0, 2.0, 3.0, 4.0]]);
        assert_eq!(m.ids(), ["0"]);

        let again = dir.path().join("again.delf");
        write_features(&m, &again, FeatureFormat::Binary(Dtype::F64)).unwrap();
        assert_eq!(std::fs::read(&again).unwrap(), bytes);
    }

    #[test]
    fn delf_zero_dimension_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.delf");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"DELF");
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&[1, 0]);
        bytes.extend_from_slice(&3u64.to_le_bytes());
        bytes.extend_from_slice(&0u64.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        let err = read_features(&path, FeatureFormat::Binary(Dtype::F64)).unwrap_err();
        assert!(
            matches!(err, Error::Format { ref location, .. } if location.ends_with("bad.delf byte 16")),
            "{err}"
        );
    }

    #[test]
    fn delf_bad_magic_and_truncation() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.delf");
        std::fs::write(&path, b"NOPE\x01\x00\x01\x00").unwrap();
        let err = read_features(&path, FeatureFormat::Binary(Dtype::F64)).unwrap_err();
        assert!(
            matches!(err, Error::Format { ref location, .. } if location.ends_with("bad.delf byte 0"))
        );

        let m = random_matrix(3, 2, 1);
        write_features(&m, &path, FeatureFormat::Binary(Dtype::F64)).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        let err = read_features(&path, FeatureFormat::Binary(Dtype::F64)).unwrap_err();
        assert!(
            matches!(err, Error::Format { ref location, .. } if location.ends_with("bad.delf byte 24")),
            "{err}"
        );
    }

    #[test]
    fn delf_rejects_nan_payload() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("nan.delf");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"DELF\x01\x00\x01\x00");
        bytes.extend_from_slice(&1u64.to_le_bytes());
        bytes.extend_from_slice(&2u64.to_le_bytes());
        bytes.extend_from_slice(&0.5f64.to_le_bytes());
        bytes.extend_from_slice(&f64::INFINITY.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        let err = read_features(&path, FeatureFormat::Binary(Dtype::F64)).unwrap_err();
        assert!(
            matches!(err, Error::Data(ref m) if m.contains("row 0, column 1")),
            "{err}"
        );
    }

    #[test]
    fn roundtrip_random_matrix_preserves_values_and_ids() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.delf");
        let (_, values) = random_matrix(10, 8, 3).into_parts();
        let ids: Vec<String> = (0..10).rev().map(|i| format!("img_{i}")).collect();
        let m = FeatureMatrix::new(ids, values).unwrap();
        write_features(&m, &path, FeatureFormat::Binary(Dtype::F64)).unwrap();
        let back = read_features(&path, FeatureFormat::Binary(Dtype::F64)).unwrap();
        assert_eq!(back, m);
        for (a, b) in back.values().iter().zip(m.values().iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn f32_payload_roundtrips_bit_exactly() {
        let dir = tempdir().unwrap();
        let src = dir.path().join("a.delf");
        let dst = dir.path().join("b.delf");
        let m = random_matrix(5, 3, 9);
        write_features(&m, &src, FeatureFormat::Binary(Dtype::F32)).unwrap();
        let widened = read_features(&src, FeatureFormat::Binary(Dtype::F32)).unwrap();
        write_features(&widened, &dst, FeatureFormat::Binary(Dtype::F32)).unwrap();
        assert_eq!(std::fs::read(&src).unwrap(), std::fs::read(&dst).unwrap());
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let m = random_matrix(6, 4, 11);
        write_features(&m, &path, FeatureFormat::Csv { header: true }).unwrap();
        let back = read_features(&path, FeatureFormat::Csv { header: true }).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let m = random_matrix(2, 2, 0);
        let path = Path::new("/nonexistent-dir/sub/m.delf");
        let err = write_features(&m, path, FeatureFormat::Binary(Dtype::F64)).unwrap_err();
        assert!(matches!(err, Error::Io { ref path, .. } if path.ends_with("m.delf")));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err =
            FeatureMatrix::new(vec!["a".into(), "a".into()], Array2::zeros((2, 1))).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn pool_constant_maps() {
        let block =
            FeatureMapBlock::new(vec!["x".into(), "y".into()], Array3::ones((2, 5, 49))).unwrap();
        let pooled = global_average_pool(&block).unwrap();
        assert_eq!(pooled.values(), Array2::<f64>::ones((2, 5)));
    }

    #[test]
    fn pool_single_hot_cell() {
        let v = 0.37;
        let mut maps = Array3::zeros((1, 1, 49));
        maps[[0, 0, 48]] = 49.0 * v;
        let block = FeatureMapBlock::new(vec!["x".into()], maps).unwrap();
        let pooled = global_average_pool(&block).unwrap();
        assert!((pooled.values()[[0, 0]] - v).abs() < 1e-15);
    }

    #[test]
    fn pool_matches_loop_sum() {
        let mut rng = Rng::new(4);
        let maps = Array3::from_shape_simple_fn((2, 3, 4), || rng.normal(0.0, 1.0));
        let block = FeatureMapBlock::new(vec!["a".into(), "b".into()], maps.clone()).unwrap();
        let pooled = global_average_pool(&block).unwrap();
        for i in 0..2 {
            for c in 0..3 {
                let mut total = 0.0;
                for s in 0..4 {
                    total += maps[[i, c, s]];
                }
                assert!((pooled.values()[[i, c]] - total / 4.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn pool_empty_cells_is_data_error() {
        let block = FeatureMapBlock::new(vec!["a".into()], Array3::zeros((1, 3, 0))).unwrap();
        assert!(matches!(global_average_pool(&block), Err(Error::Data(_))));
    }

    #[test]
    fn feature_map_roundtrip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("maps.delm");
        let mut rng = Rng::new(2);
        let maps = Array3::from_shape_simple_fn((3, 4, 49), || rng.normal(0.0, 1.0));
        let block = FeatureMapBlock::new(vec!["p".into(), "q".into(), "r".into()], maps).unwrap();
        write_feature_maps(&block, &path, Dtype::F64).unwrap();
        assert_eq!(read_feature_maps(&path).unwrap(), block);
    }

    #[test]
    fn stratified_full_fraction_keeps_everything() {
        let labels = vec![0, 1, 0, 1, 1];
        let idx = stratified_indices(&labels, 1.0, &mut Rng::new(3)).unwrap();
        assert_eq!(idx, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn stratified_balanced_tenth() {
        let labels: Vec<usize> = (0..100).map(|i| i % 2).collect();
        let idx = stratified_indices(&labels, 0.1, &mut Rng::new(3)).unwrap();
        assert_eq!(idx.iter().filter(|&&i| labels[i] == 0).count(), 5);
        assert_eq!(idx.iter().filter(|&&i| labels[i] == 1).count(), 5);
    }

    #[test]
    fn stratified_is_deterministic() {
        let labels: Vec<usize> = (0..200).map(|i| i % 3).collect();
        let a = stratified_indices(&labels, 0.25, &mut Rng::new(8)).unwrap();
        let b = stratified_indices(&labels, 0.25, &mut Rng::new(8)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn stratified_missing_label_is_error() {
        let m = random_matrix(3, 2, 0);
        let labels = Labeling::from_indices(&m.ids()[..2], &[0, 1]);
        let err = stratified_sample(&m, &labels, 0.5, &mut Rng::new(0)).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn manifest_parses_sparse_labels() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("labels.csv");
        std::fs::write(
            &path,
            "id,style,genre\na,Baroque,portrait\nb,,landscape\nc,Cubism,\n",
        )
        .unwrap();
        let m = read_label_manifest(&path).unwrap();
        assert_eq!(m.style.classes, ["Baroque", "Cubism"]);
        assert_eq!(m.style.get("a"), Some(0));
        assert_eq!(m.style.get("b"), None);
        assert_eq!(m.genre.get("b"), Some(0));
        assert_eq!(m.genre.get("a"), Some(1));
    }

    #[test]
    fn assignments_roundtrip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("a.csv");
        let q = array![[0.25, 0.75], [0.6, 0.4]];
        let a =
            ClusterAssignments::new(vec!["x".into(), "y".into()], vec![1, 0], Some(q), 2).unwrap();
        write_assignments(&a, &path).unwrap();
        assert_eq!(read_assignments(&path).unwrap(), a);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("id,cluster,q_0,q_1\n"));
    }

    #[test]
    fn assignments_reject_bad_rows() {
        let q = array![[0.3, 0.3]];
        assert!(ClusterAssignments::new(vec!["x".into()], vec![0], Some(q), 2).is_err());
        assert!(ClusterAssignments::new(vec!["x".into()], vec![2], None, 2).is_err());
    }

    mod props {
        use super::*;
        use crate::rng::Rng;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn pooled_values_within_channel_range(seed in any::<u64>(), s in 1usize..20) {
                let mut rng = Rng::new(seed);
                let maps = Array3::from_shape_simple_fn((2, 3, s), || rng.normal(0.0, 5.0));
                let block = FeatureMapBlock::new(vec!["a".into(), "b".into()], maps.clone()).unwrap();
                let pooled = global_average_pool(&block).unwrap();
                for i in 0..2 {
                    for c in 0..3 {
                        let cells = maps.slice(ndarray::s![i, c, ..]);
                        let lo = cells.iter().cloned().fold(f64::INFINITY, f64::min);
                        let hi = cells.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let v = pooled.values()[[i, c]];
                        prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
                    }
                }
            }

            #[test]
            fn stratified_two_class_ratio(seed in any::<u64>(), n0 in 1usize..80, n1 in 1usize..80, frac in 0.05f64..1.0) {
                let labels: Vec<usize> = (0..n0).map(|_| 0).chain((0..n1).map(|_| 1)).collect();
                let idx = stratified_indices(&labels, frac, &mut Rng::new(seed)).unwrap();
                for (class, size) in [(0, n0), (1, n1)] {
                    let got = idx.iter().filter(|&&i| labels[i] == class).count() as f64;
                    prop_assert!((got - frac * size as f64).abs() <= 1.0);
                }
            }

            #[test]
            fn delf_roundtrip_bit_exact(seed in any::<u64>(), n in 1usize..6, d in 1usize..6, f32_payload in any::<bool>()) {
                let dir = tempdir().unwrap();
                let path = dir.path().join("m.delf");
                let dtype = if f32_payload { Dtype::F32 } else { Dtype::F64 };
                let mut rng = Rng::new(seed);
                let values = Array2::from_shape_simple_fn((n, d), || {
                    let v = rng.normal(0.0, 1e3);
                    if f32_payload { v as f32 as f64 } else { v }
                });
                let m = FeatureMatrix::from_values(values).unwrap();
                write_features(&m, &path, FeatureFormat::Binary(dtype)).unwrap();
                let back = read_features(&path, FeatureFormat::Binary(dtype)).unwrap();
                for (a, b) in back.values().iter().zip(m.values().iter()) {
                    prop_assert_eq!(a.to_bits(), b.to_bits());
                }
            }
        }
    }
}
