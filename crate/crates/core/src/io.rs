//! On-disk formats.
//!
//! Matrix file (`SSMMAT01`): 8-byte ASCII magic, `rows` and `cols` as `u32`
//! little-endian, then `rows * cols` row-major `f64` little-endian values.
//!
//! Model file (`SSMMOD01`): magic, a fixed header (format version, layout,
//! propagation and graph settings), then the `Q` matrix, the online factor
//! `R` and the bandwidths as embedded matrix records, and finally the vertex
//! manifest mapping each vertex to its index in the original distance file.
//!
//! Labels CSV: header `index,block,identity`, `block` is `gallery` or
//! `labeled`, `identity` is empty for gallery rows.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::embedding::RankingResult;
use crate::error::{Error, Result};
use crate::eval::GroundTruth;
use crate::graph::GraphConfig;
use crate::labels::DatasetLayout;
use crate::linalg::Matrix;
use crate::propagation::PropagationConfig;

pub const MATRIX_MAGIC: &[u8; 8] = b"SSMMAT01";
pub const MODEL_MAGIC: &[u8; 8] = b"SSMMOD01";
pub const MODEL_VERSION: u32 = 1;

/// Reader that tracks the byte offset for error reporting.
pub struct OffsetReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> OffsetReader<R> {
    pub fn new(inner: R) -> Self {
        Self { inner, offset: 0 }
    }

    pub fn offset(&self) -> u64 {
        self.offset
    }

    fn fill(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        let start = self.offset;
        let mut got = 0;
        while got < buf.len() {
            match self.inner.read(&mut buf[got..]) {
                Ok(0) => {
                    return Err(Error::format(
                        start + got as u64,
                        format!(
                            "truncated {what}: expected {} bytes, found {got}",
                            buf.len()
                        ),
                    ))
                }
                Ok(n) => got += n,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        self.offset += buf.len() as u64;
        Ok(())
    }

    fn magic(&mut self, expected: &[u8; 8]) -> Result<()> {
        let at = self.offset;
        let mut buf = [0u8; 8];
        self.fill(&mut buf, "magic")?;
        if &buf != expected {
            return Err(Error::format(
                at,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(&buf),
                    String::from_utf8_lossy(expected)
                ),
            ));
        }
        Ok(())
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        let mut b = [0u8; 1];
        self.fill(&mut b, what)?;
        Ok(b[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.fill(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let mut b = [0u8; 8];
        self.fill(&mut b, what)?;
        Ok(u64::from_le_bytes(b))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let at = self.offset;
        let mut b = [0u8; 8];
        self.fill(&mut b, what)?;
        let v = f64::from_le_bytes(b);
        if !v.is_finite() {
            return Err(Error::format(at, format!("non-finite {what}")));
        }
        Ok(v)
    }

    fn f64s(&mut self, out: &mut [f64], what: &str) -> Result<()> {
        let at = self.offset;
        let mut bytes = vec![0u8; out.len() * 8];
        self.fill(&mut bytes, what)?;
        for (i, (o, c)) in out.iter_mut().zip(bytes.chunks_exact(8)).enumerate() {
            *o = f64::from_le_bytes(c.try_into().expect("8-byte chunk"));
            if !o.is_finite() {
                return Err(Error::format(
                    at + 8 * i as u64,
                    format!("non-finite {what} value"),
                ));
            }
        }
        Ok(())
    }

    /// Fails unless the stream is exhausted.
    pub fn expect_end(&mut self) -> Result<()> {
        let mut b = [0u8; 1];
        loop {
            match self.inner.read(&mut b) {
                Ok(0) => return Ok(()),
                Ok(_) => return Err(Error::format(self.offset, "trailing bytes after payload")),
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
    }
}

fn dim_u32(op: &'static str, v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::capacity(op, format!("{v} does not fit in u32")))
}

fn write_matrix_header<W: Write>(w: &mut W, rows: usize, cols: usize) -> Result<()> {
    if rows == 0 || cols == 0 {
        return Err(Error::shape(
            "write_matrix",
            format!("refusing to write empty {rows}x{cols} matrix"),
        ));
    }
    w.write_all(MATRIX_MAGIC)?;
    w.write_all(&dim_u32("write_matrix", rows)?.to_le_bytes())?;
    w.write_all(&dim_u32("write_matrix", cols)?.to_le_bytes())?;
    Ok(())
}

pub fn write_matrix<W: Write>(w: &mut W, m: &Matrix) -> Result<()> {
    write_matrix_header(w, m.rows(), m.cols())?;
    for x in m.data() {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

/// Reads the 16-byte header, returning `(rows, cols)`.
fn read_matrix_header<R: Read>(r: &mut OffsetReader<R>) -> Result<(usize, usize)> {
    r.magic(MATRIX_MAGIC)?;
    let at = r.offset();
    let rows = r.u32("row count")? as usize;
    let cols = r.u32("column count")? as usize;
    if rows == 0 || cols == 0 {
        return Err(Error::format(at, format!("empty {rows}x{cols} matrix")));
    }
    Ok((rows, cols))
}

/// Reads one matrix record, leaving the reader positioned after it.
pub fn read_matrix_record<R: Read>(r: &mut OffsetReader<R>) -> Result<Matrix> {
    let (rows, cols) = read_matrix_header(r)?;
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::format(r.offset(), "matrix size overflows"))?;
    let mut data = vec![0.0; len];
    r.f64s(&mut data, "matrix")?;
    Matrix::new(rows, cols, data)
}

/// Reads a complete matrix file body; trailing bytes are an error.
pub fn read_matrix<R: Read>(r: R) -> Result<Matrix> {
    let mut r = OffsetReader::new(r);
    let m = read_matrix_record(&mut r)?;
    r.expect_end()?;
    Ok(m)
}

/// Streams the rows of a matrix file one at a time.
pub struct MatrixRowReader<R> {
    inner: OffsetReader<R>,
    rows: usize,
    cols: usize,
    next: usize,
}

impl<R: Read> MatrixRowReader<R> {
    pub fn new(r: R) -> Result<Self> {
        let mut inner = OffsetReader::new(r);
        let (rows, cols) = read_matrix_header(&mut inner)?;
        Ok(Self {
            inner,
            rows,
            cols,
            next: 0,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }
}

impl<R: Read> Iterator for MatrixRowReader<R> {
    type Item = Result<Vec<f64>>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next == self.rows {
            return None;
        }
        self.next += 1;
        let mut row = vec![0.0; self.cols];
        Some(self.inner.f64s(&mut row, "matrix row").map(|_| row))
    }
}

/// Plain numeric CSV, one matrix row per line, no header.
pub fn read_matrix_csv<R: Read>(r: R) -> Result<Matrix> {
    let rows: Vec<Vec<f64>> = csv_rows(r).collect::<Result<_>>()?;
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 {
        return Err(Error::format(0, "empty CSV matrix"));
    }
    if let Some(bad) = rows.iter().position(|r| r.len() != cols) {
        return Err(Error::format(
            0,
            format!(
                "CSV row {bad} has {} values, expected {cols}",
                rows[bad].len()
            ),
        ));
    }
    Matrix::new(rows.len(), cols, rows.concat())
}

/// Streams numeric CSV rows.
pub fn csv_rows<R: Read>(r: R) -> impl Iterator<Item = Result<Vec<f64>>> {
    let reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(r);
    reader.into_records().map(|rec| {
        let rec = rec.map_err(csv_error)?;
        let at = rec.position().map_or(0, |p| p.byte());
        rec.iter()
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::format(at, format!("not a finite number: {f:?}")))
            })
            .collect()
    })
}

pub fn write_matrix_csv<W: Write>(w: &mut W, m: &Matrix) -> Result<()> {
    for i in 0..m.rows() {
        let line: Vec<String> = m.row(i).iter().map(|x| format!("{x:?}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    let at = e.position().map_or(0, |p| p.byte());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => io.into(),
        other => Error::format(at, format!("{other:?}")),
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Reads a matrix from `path`, as CSV when the extension is `.csv`.
pub fn read_matrix_file(path: &Path) -> Result<Matrix> {
    let f = BufReader::new(File::open(path)?);
    if is_csv(path) {
        read_matrix_csv(f)
    } else {
        read_matrix(f)
    }
}

pub fn write_matrix_file(path: &Path, m: &Matrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    if is_csv(path) {
        write_matrix_csv(&mut w, m)?;
    } else {
        write_matrix(&mut w, m)?;
    }
    w.flush()?;
    Ok(())
}

/// Streams rows of a matrix file (binary or CSV by extension).
pub fn matrix_rows(path: &Path) -> Result<Box<dyn Iterator<Item = Result<Vec<f64>>>>> {
    let f = BufReader::new(File::open(path)?);
    if is_csv(path) {
        Ok(Box::new(csv_rows(f)))
    } else {
        Ok(Box::new(MatrixRowReader::new(f)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Gallery,
    Labeled,
}

/// One line of the labels CSV.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelRecord {
    pub index: usize,
    pub block: BlockKind,
    pub identity: Option<u64>,
}

/// Parses the labels CSV. Indices must be a permutation of `0..n`.
pub fn read_labels_csv<R: Read>(r: R) -> Result<Vec<LabelRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(r);
    let headers = reader.headers().map_err(csv_error)?.clone();
    if headers.iter().collect::<Vec<_>>() != ["index", "block", "identity"] {
        return Err(Error::format(
            0,
            format!("labels header must be `index,block,identity`, got {headers:?}"),
        ));
    }
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(csv_error)?;
        let at = rec.position().map_or(0, |p| p.byte());
        let bad = |what: String| Error::format(at, what);
        if rec.len() != 3 {
            return Err(bad(format!("expected 3 fields, got {}", rec.len())));
        }
        let index = rec[0]
            .parse::<usize>()
            .map_err(|_| bad(format!("bad index {:?}", &rec[0])))?;
        let block = match &rec[1] {
            "gallery" => BlockKind::Gallery,
            "labeled" => BlockKind::Labeled,
            other => return Err(bad(format!("unknown block {other:?}"))),
        };
        let identity = match (block, &rec[2]) {
            (BlockKind::Gallery, "") => None,
            (BlockKind::Gallery, id) => {
                return Err(bad(format!("gallery row {index} carries identity {id:?}")))
            }
            (BlockKind::Labeled, "") => {
                return Err(bad(format!("labeled row {index} has no identity")))
            }
            (BlockKind::Labeled, id) => Some(
                id.parse::<u64>()
                    .map_err(|_| bad(format!("bad identity {id:?}")))?,
            ),
        };
        out.push(LabelRecord {
            index,
            block,
            identity,
        });
    }
    let mut seen = vec![false; out.len()];
    for r in &out {
        if r.index >= out.len() || std::mem::replace(&mut seen[r.index], true) {
            return Err(Error::format(
                0,
                format!(
                    "label indices must be a permutation of 0..{}; {} is out of range or repeated",
                    out.len(),
                    r.index
                ),
            ));
        }
    }
    Ok(out)
}

pub fn write_labels_csv<W: Write>(w: &mut W, records: &[LabelRecord]) -> Result<()> {
    writeln!(w, "index,block,identity")?;
    for r in records {
        let block = match r.block {
            BlockKind::Gallery => "gallery",
            BlockKind::Labeled => "labeled",
        };
        let id = r.identity.map(|i| i.to_string()).unwrap_or_default();
        writeln!(w, "{},{block},{id}", r.index)?;
    }
    Ok(())
}

/// Vertex `v` of the model corresponds to row `original_index` of the
/// distance file the model was learned from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VertexEntry {
    pub original_index: usize,
    pub block: BlockKind,
    pub identity: Option<u64>,
}

/// Sorts label records into `[gallery | labeled]` vertex order, ascending
/// original index within each block.
pub fn vertex_manifest(records: &[LabelRecord]) -> (DatasetLayout, Vec<VertexEntry>) {
    let mut sorted: Vec<&LabelRecord> = records.iter().collect();
    sorted.sort_by_key(|r| (r.block == BlockKind::Labeled, r.index));
    let n_gallery = sorted
        .iter()
        .filter(|r| r.block == BlockKind::Gallery)
        .count();
    let manifest = sorted
        .into_iter()
        .map(|r| VertexEntry {
            original_index: r.index,
            block: r.block,
            identity: r.identity,
        })
        .collect::<Vec<_>>();
    let layout = DatasetLayout::new(n_gallery, manifest.len() - n_gallery);
    (layout, manifest)
}

/// Everything persisted after offline learning.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub layout: DatasetLayout,
    pub propagation: PropagationConfig,
    pub iterations_run: usize,
    pub graph: GraphConfig,
    pub labeled_diagonal: bool,
    pub q: Matrix,
    pub r: Matrix,
    pub sigmas: Vec<f64>,
    pub manifest: Vec<VertexEntry>,
}

impl ModelFile {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        const OP: &str = "ModelFile::write";
        let n = self.layout.total();
        if self.q.shape() != (n, n)
            || self.r.shape() != (n, self.layout.n_gallery)
            || self.sigmas.len() != n
            || self.manifest.len() != n
        {
            return Err(Error::shape(OP, "model parts disagree with the layout"));
        }
        w.write_all(MODEL_MAGIC)?;
        w.write_all(&MODEL_VERSION.to_le_bytes())?;
        w.write_all(&dim_u32(OP, self.layout.n_gallery)?.to_le_bytes())?;
        w.write_all(&dim_u32(OP, self.layout.n_labeled)?.to_le_bytes())?;
        w.write_all(&self.propagation.alpha.to_le_bytes())?;
        w.write_all(&dim_u32(OP, self.propagation.iterations)?.to_le_bytes())?;
        w.write_all(&dim_u32(OP, self.iterations_run)?.to_le_bytes())?;
        w.write_all(&self.propagation.early_stop_tol.to_le_bytes())?;
        w.write_all(&dim_u32(OP, self.graph.kernel_k)?.to_le_bytes())?;
        w.write_all(&dim_u32(OP, self.graph.sparsify_knn.unwrap_or(0))?.to_le_bytes())?;
        w.write_all(&[u8::from(self.labeled_diagonal)])?;
        write_matrix(w, &self.q)?;
        write_matrix(w, &self.r)?;
        write_matrix(w, &Matrix::new(1, n, self.sigmas.clone())?)?;
        for e in &self.manifest {
            w.write_all(&(e.original_index as u64).to_le_bytes())?;
            let block = match e.block {
                BlockKind::Gallery => 0u8,
                BlockKind::Labeled => 1u8,
            };
            w.write_all(&[block, u8::from(e.identity.is_some())])?;
            w.write_all(&e.identity.unwrap_or(0).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut r = OffsetReader::new(r);
        r.magic(MODEL_MAGIC)?;
        let at = r.offset();
        let version = r.u32("version")?;
        if version != MODEL_VERSION {
            return Err(Error::format(
                at,
                format!("unsupported model version {version}"),
            ));
        }
        let n_gallery = r.u32("gallery count")? as usize;
        let n_labeled = r.u32("labeled count")? as usize;
        let alpha = r.f64("alpha")?;
        let iterations = r.u32("iterations")? as usize;
        let iterations_run = r.u32("iterations run")? as usize;
        let early_stop_tol = r.f64("early stop tolerance")?;
        let kernel_k = r.u32("kernel k")? as usize;
        let sparsify = r.u32("sparsify k")? as usize;
        let at = r.offset();
        let labeled_diagonal = match r.u8("diagonal flag")? {
            0 => false,
            1 => true,
            b => return Err(Error::format(at, format!("bad diagonal flag {b}"))),
        };
        let layout = DatasetLayout::new(n_gallery, n_labeled);
        let n = layout.total();

        let at = r.offset();
        let q = read_matrix_record(&mut r)?;
        if q.shape() != (n, n) {
            return Err(Error::format(
                at,
                format!("Q is {:?}, expected {n}x{n}", q.shape()),
            ));
        }
        let at = r.offset();
        let rf = read_matrix_record(&mut r)?;
        if rf.shape() != (n, n_gallery) {
            return Err(Error::format(
                at,
                format!("R is {:?}, expected {n}x{n_gallery}", rf.shape()),
            ));
        }
        let at = r.offset();
        let sig = read_matrix_record(&mut r)?;
        if sig.shape() != (1, n) {
            return Err(Error::format(
                at,
                format!("sigmas are {:?}, expected 1x{n}", sig.shape()),
            ));
        }
        let mut manifest = Vec::with_capacity(n);
        for _ in 0..n {
            let at = r.offset();
            let original_index = r.u64("manifest index")? as usize;
            let block = match r.u8("manifest block")? {
                0 => BlockKind::Gallery,
                1 => BlockKind::Labeled,
                b => return Err(Error::format(at + 8, format!("bad block tag {b}"))),
            };
            let has_id = r.u8("manifest identity flag")? != 0;
            let id = r.u64("manifest identity")?;
            if original_index >= n {
                return Err(Error::format(
                    at,
                    format!("manifest index {original_index} >= {n}"),
                ));
            }
            manifest.push(VertexEntry {
                original_index,
                block,
                identity: has_id.then_some(id),
            });
        }
        r.expect_end()?;
        let propagation = PropagationConfig {
            alpha,
            iterations,
            early_stop_tol,
        };
        propagation.validate()?;
        Ok(Self {
            layout,
            propagation,
            iterations_run,
            graph: GraphConfig {
                kernel_k,
                sparsify_knn: (sparsify > 0).then_some(sparsify),
            },
            labeled_diagonal,
            q,
            r: rf,
            sigmas: sig.into_data(),
            manifest,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    /// Reorders a probe distance vector given in original file order into
    /// vertex order.
    pub fn to_vertex_order(&self, raw: &[f64]) -> Result<Vec<f64>> {
        if raw.len() != self.manifest.len() {
            return Err(Error::shape(
                "ModelFile::to_vertex_order",
                format!(
                    "probe has {} distances, model has {} vertices",
                    raw.len(),
                    self.manifest.len()
                ),
            ));
        }
        Ok(self
            .manifest
            .iter()
            .map(|e| raw[e.original_index])
            .collect())
    }

    /// Original file index of gallery vertex `g`.
    pub fn gallery_original_index(&self, g: usize) -> usize {
        self.manifest[g].original_index
    }
}

/// Header of the rankings CSV emitted by the query stage.
pub const RANKINGS_HEADER: &str = "probe,rank,gallery_index,score";

/// Appends one probe's ranking. `gallery_index` maps a gallery vertex to the
/// index reported in the file.
pub fn write_ranking<W: Write>(
    w: &mut W,
    probe: usize,
    ranking: &RankingResult,
    gallery_index: impl Fn(usize) -> usize,
) -> Result<()> {
    for (rank, &g) in ranking.order.iter().enumerate() {
        writeln!(
            w,
            "{probe},{},{},{:?}",
            rank + 1,
            gallery_index(g),
            ranking.scores[g]
        )?;
    }
    Ok(())
}

/// One probe's ranked list as read back from a rankings CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub probe: usize,
    /// `(gallery_index, score)` in rank order.
    pub entries: Vec<(usize, f64)>,
}

/// Parses a rankings CSV. Rows of a probe must be contiguous with ranks
/// `1, 2, ...`.
pub fn read_rankings_csv<R: Read>(r: R) -> Result<Vec<RankedList>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(r);
    let headers = reader.headers().map_err(csv_error)?.clone();
    if headers.iter().collect::<Vec<_>>().join(",") != RANKINGS_HEADER {
        return Err(Error::format(
            0,
            format!("rankings header must be `{RANKINGS_HEADER}`, got {headers:?}"),
        ));
    }
    let mut out: Vec<RankedList> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(csv_error)?;
        let at = rec.position().map_or(0, |p| p.byte());
        let field = |i: usize| -> Result<&str> {
            rec.get(i)
                .ok_or_else(|| Error::format(at, format!("expected 4 fields, got {}", rec.len())))
        };
        let int = |i: usize| -> Result<usize> {
            let f = field(i)?;
            f.parse()
                .map_err(|_| Error::format(at, format!("bad integer {f:?}")))
        };
        let probe = int(0)?;
        let rank = int(1)?;
        let gallery = int(2)?;
        let score: f64 = field(3)?
            .parse()
            .map_err(|_| Error::format(at, format!("bad score {:?}", &rec[3])))?;
        let fresh = out.last().is_none_or(|l| l.probe != probe);
        if fresh {
            if out.iter().any(|l| l.probe == probe) {
                return Err(Error::format(
                    at,
                    format!("rows of probe {probe} are not contiguous"),
                ));
            }
            out.push(RankedList {
                probe,
                entries: Vec::new(),
            });
        }
        let list = out.last_mut().expect("pushed above");
        if rank != list.entries.len() + 1 {
            return Err(Error::format(
                at,
                format!(
                    "probe {probe}: rank {rank} follows rank {}",
                    list.entries.len()
                ),
            ));
        }
        list.entries.push((gallery, score));
    }
    Ok(out)
}

/// Header of the ground-truth CSV.
pub const TRUTH_HEADER: &str = "role,index,identity";

/// Ground truth keyed by file indices: probe row numbers and gallery indices
/// as they appear in the rankings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TruthTable {
    /// `(probe, identity)` ascending by probe.
    pub probes: Vec<(usize, u64)>,
    /// `(gallery_index, identity)` ascending by index.
    pub gallery: Vec<(usize, u64)>,
}

impl TruthTable {
    /// Converts ranked lists into position-indexed rankings plus the
    /// matching [`GroundTruth`]. Every truth probe needs a ranked list
    /// covering the full gallery.
    pub fn align(&self, lists: &[RankedList]) -> Result<(Vec<RankingResult>, GroundTruth)> {
        const OP: &str = "TruthTable::align";
        let position: std::collections::HashMap<usize, usize> = self
            .gallery
            .iter()
            .enumerate()
            .map(|(pos, &(idx, _))| (idx, pos))
            .collect();
        let by_probe: std::collections::HashMap<usize, &RankedList> =
            lists.iter().map(|l| (l.probe, l)).collect();
        let n_g = self.gallery.len();
        let mut rankings = Vec::with_capacity(self.probes.len());
        for &(p, _) in &self.probes {
            let list = by_probe
                .get(&p)
                .ok_or_else(|| Error::shape(OP, format!("no ranking for probe {p}")))?;
            if list.entries.len() != n_g {
                return Err(Error::shape(
                    OP,
                    format!(
                        "probe {p} ranks {} entries, gallery has {n_g}",
                        list.entries.len()
                    ),
                ));
            }
            let mut scores = vec![f64::NAN; n_g];
            let mut order = Vec::with_capacity(n_g);
            for &(g, score) in &list.entries {
                let pos = *position.get(&g).ok_or_else(|| {
                    Error::shape(OP, format!("probe {p} ranks unknown gallery index {g}"))
                })?;
                if !scores[pos].is_nan() {
                    return Err(Error::shape(
                        OP,
                        format!("probe {p} ranks gallery {g} twice"),
                    ));
                }
                scores[pos] = score;
                order.push(pos);
            }
            rankings.push(RankingResult { scores, order });
        }
        let truth = GroundTruth::new(
            self.probes.iter().map(|&(_, id)| id).collect(),
            self.gallery.iter().map(|&(_, id)| id).collect(),
        );
        Ok((rankings, truth))
    }
}

pub fn read_truth_csv<R: Read>(r: R) -> Result<TruthTable> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(r);
    let headers = reader.headers().map_err(csv_error)?.clone();
    if headers.iter().collect::<Vec<_>>().join(",") != TRUTH_HEADER {
        return Err(Error::format(
            0,
            format!("truth header must be `{TRUTH_HEADER}`, got {headers:?}"),
        ));
    }
    let mut t = TruthTable {
        probes: Vec::new(),
        gallery: Vec::new(),
    };
    for rec in reader.records() {
        let rec = rec.map_err(csv_error)?;
        let at = rec.position().map_or(0, |p| p.byte());
        if rec.len() != 3 {
            return Err(Error::format(
                at,
                format!("expected 3 fields, got {}", rec.len()),
            ));
        }
        let index: usize = rec[1]
            .parse()
            .map_err(|_| Error::format(at, format!("bad index {:?}", &rec[1])))?;
        let id: u64 = rec[2]
            .parse()
            .map_err(|_| Error::format(at, format!("bad identity {:?}", &rec[2])))?;
        match &rec[0] {
            "probe" => t.probes.push((index, id)),
            "gallery" => t.gallery.push((index, id)),
            other => return Err(Error::format(at, format!("unknown role {other:?}"))),
        }
    }
    t.probes.sort_unstable();
    t.gallery.sort_unstable();
    for (what, v) in [("probe", &t.probes), ("gallery", &t.gallery)] {
        if let Some(w) = v.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::format(
                0,
                format!("duplicate {what} index {}", w[0].0),
            ));
        }
    }
    Ok(t)
}

pub fn write_truth_csv<W: Write>(w: &mut W, t: &TruthTable) -> Result<()> {
    writeln!(w, "{TRUTH_HEADER}")?;
    for &(i, id) in &t.probes {
        writeln!(w, "probe,{i},{id}")?;
    }
    for &(i, id) in &t.gallery {
        writeln!(w, "gallery,{i},{id}")?;
    }
    Ok(())
}
