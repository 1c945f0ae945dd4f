//! File formats: `CLFREQ01` frequency sets, `CLSKCH01` sketches, `CLDATA01`
//! sample matrices (CSV accepted on input) and the JSON-compatible GMM text.
//!
//! Binary formats are little-endian. Truncation, bad magic and fingerprint
//! mismatches surface as [`Error::Format`].

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::freqdesign::{FrequencyKind, FrequencySet};
use crate::model::{Dataset, GaussianParams, Mixture};
use crate::sketch::Sketch;

pub const FREQ_MAGIC: &[u8; 8] = b"CLFREQ01";
pub const SKETCH_MAGIC: &[u8; 8] = b"CLSKCH01";
pub const DATA_MAGIC: &[u8; 8] = b"CLDATA01";

fn read_array<const N: usize>(r: &mut impl Read, what: &'static str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::format(what, "truncated file"),
        _ => Error::Io(e),
    })?;
    Ok(buf)
}

fn read_u8(r: &mut impl Read, what: &'static str) -> Result<u8> {
    Ok(read_array::<1>(r, what)?[0])
}

fn read_u32(r: &mut impl Read, what: &'static str) -> Result<u32> {
    read_array(r, what).map(u32::from_le_bytes)
}

fn read_u64(r: &mut impl Read, what: &'static str) -> Result<u64> {
    read_array(r, what).map(u64::from_le_bytes)
}

fn read_f64(r: &mut impl Read, what: &'static str) -> Result<f64> {
    read_array(r, what).map(f64::from_le_bytes)
}

fn read_f64s(r: &mut impl Read, count: usize, what: &'static str) -> Result<Vec<f64>> {
    (0..count).map(|_| read_f64(r, what)).collect()
}

fn expect_magic(r: &mut impl Read, magic: &[u8; 8], what: &'static str) -> Result<()> {
    let got = read_array::<8>(r, what)?;
    if &got != magic {
        return Err(Error::format(
            what,
            format!("bad magic {:?}", String::from_utf8_lossy(&got)),
        ));
    }
    Ok(())
}

fn expect_eof(r: &mut impl Read, what: &'static str) -> Result<()> {
    let mut probe = [0u8; 1];
    match r.read(&mut probe)? {
        0 => Ok(()),
        _ => Err(Error::format(what, "trailing bytes after payload")),
    }
}

fn to_u32(x: usize, what: &'static str) -> Result<u32> {
    u32::try_from(x).map_err(|_| Error::format(what, format!("{x} does not fit in u32")))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path)?))
}

pub fn write_frequencies(w: &mut impl Write, fs: &FrequencySet) -> Result<()> {
    w.write_all(FREQ_MAGIC)?;
    w.write_all(&to_u32(fs.dim(), "frequency file")?.to_le_bytes())?;
    w.write_all(&to_u32(fs.len(), "frequency file")?.to_le_bytes())?;
    w.write_all(&[fs.kind().code()])?;
    w.write_all(&fs.sigma2_bar().to_le_bytes())?;
    w.write_all(&fs.seed().to_le_bytes())?;
    for v in fs.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&fs.fingerprint().to_le_bytes())?;
    Ok(())
}

/// Reads a frequency set and checks the stored fingerprint against the payload.
pub fn read_frequencies(r: &mut impl Read) -> Result<FrequencySet> {
    const WHAT: &str = "frequency file";
    expect_magic(r, FREQ_MAGIC, WHAT)?;
    let d = read_u32(r, WHAT)? as usize;
    let m = read_u32(r, WHAT)? as usize;
    let code = read_u8(r, WHAT)?;
    let kind = FrequencyKind::from_code(code).map_err(|e| Error::format(WHAT, e.to_string()))?;
    let sigma2_bar = read_f64(r, WHAT)?;
    let seed = read_u64(r, WHAT)?;
    if d == 0 || m == 0 {
        return Err(Error::format(
            WHAT,
            format!("empty frequency matrix ({m} x {d})"),
        ));
    }
    let freqs = read_f64s(r, m * d, WHAT)?;
    let stored = read_u64(r, WHAT)?;
    expect_eof(r, WHAT)?;
    let fs = FrequencySet::new(d, freqs, kind, sigma2_bar, seed)
        .map_err(|e| Error::format(WHAT, e.to_string()))?;
    if fs.fingerprint() != stored {
        return Err(Error::format(
            WHAT,
            format!(
                "fingerprint {stored:#018x} does not match payload {:#018x}",
                fs.fingerprint()
            ),
        ));
    }
    Ok(fs)
}

pub fn save_frequencies(path: impl AsRef<Path>, fs: &FrequencySet) -> Result<()> {
    let mut w = create(path.as_ref())?;
    write_frequencies(&mut w, fs)?;
    Ok(w.flush()?)
}

pub fn load_frequencies(path: impl AsRef<Path>) -> Result<FrequencySet> {
    read_frequencies(&mut open(path.as_ref())?)
}

pub fn write_sketch(w: &mut impl Write, sk: &Sketch) -> Result<()> {
    w.write_all(SKETCH_MAGIC)?;
    w.write_all(&to_u32(sk.len(), "sketch file")?.to_le_bytes())?;
    w.write_all(&sk.count().to_le_bytes())?;
    w.write_all(&[u8::from(sk.is_analytic())])?;
    w.write_all(&sk.fingerprint().to_le_bytes())?;
    for z in sk.values() {
        w.write_all(&z.re.to_le_bytes())?;
        w.write_all(&z.im.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_sketch(r: &mut impl Read) -> Result<Sketch> {
    const WHAT: &str = "sketch file";
    expect_magic(r, SKETCH_MAGIC, WHAT)?;
    let m = read_u32(r, WHAT)? as usize;
    let count = read_u64(r, WHAT)?;
    let analytic = match read_u8(r, WHAT)? {
        0 => false,
        1 => true,
        other => {
            return Err(Error::format(
                WHAT,
                format!("analytic flag must be 0 or 1, got {other}"),
            ))
        }
    };
    let fingerprint = read_u64(r, WHAT)?;
    let values = (0..m)
        .map(|_| Ok(Complex64::new(read_f64(r, WHAT)?, read_f64(r, WHAT)?)))
        .collect::<Result<Vec<_>>>()?;
    expect_eof(r, WHAT)?;
    Sketch::new(values, count, fingerprint, analytic)
        .map_err(|e| Error::format(WHAT, e.to_string()))
}

pub fn save_sketch(path: impl AsRef<Path>, sk: &Sketch) -> Result<()> {
    let mut w = create(path.as_ref())?;
    write_sketch(&mut w, sk)?;
    Ok(w.flush()?)
}

pub fn load_sketch(path: impl AsRef<Path>) -> Result<Sketch> {
    read_sketch(&mut open(path.as_ref())?)
}

pub fn write_data_header(w: &mut impl Write, d: usize, n: u64) -> Result<()> {
    w.write_all(DATA_MAGIC)?;
    w.write_all(&to_u32(d, "data file")?.to_le_bytes())?;
    w.write_all(&n.to_le_bytes())?;
    Ok(())
}

pub fn write_data_rows(w: &mut impl Write, rows: &[f64]) -> Result<()> {
    for v in rows {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_data(w: &mut impl Write, data: &Dataset) -> Result<()> {
    write_data_header(w, data.dim(), data.len() as u64)?;
    write_data_rows(w, data.as_slice())
}

pub fn save_data(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let mut w = create(path.as_ref())?;
    write_data(&mut w, data)?;
    Ok(w.flush()?)
}

enum Source {
    Binary {
        reader: BufReader<File>,
        remaining: u64,
    },
    Csv {
        records: csv::StringRecordsIntoIter<BufReader<File>>,
        line: u64,
    },
}

/// Chunked reader over a `CLDATA01` or CSV sample file. Memory use is bounded by
/// the requested chunk size.
pub struct DataReader {
    source: Source,
    dim: usize,
    declared: Option<u64>,
    pending: Option<Vec<f64>>,
}

fn parse_csv_row(rec: &csv::StringRecord) -> Option<Vec<f64>> {
    rec.iter().map(|f| f.parse::<f64>().ok()).collect()
}

impl DataReader {
    /// Opens `path`, detecting the format from its first eight bytes.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut reader = open(path)?;
        let head = reader.fill_buf()?;
        if head.starts_with(DATA_MAGIC) {
            const WHAT: &str = "data file";
            expect_magic(&mut reader, DATA_MAGIC, WHAT)?;
            let dim = read_u32(&mut reader, WHAT)? as usize;
            let n = read_u64(&mut reader, WHAT)?;
            if dim == 0 {
                return Err(Error::format(WHAT, "dimension 0"));
            }
            return Ok(DataReader {
                source: Source::Binary {
                    reader,
                    remaining: n,
                },
                dim,
                declared: Some(n),
                pending: None,
            });
        }
        Self::open_csv(reader)
    }

    fn open_csv(reader: BufReader<File>) -> Result<Self> {
        const WHAT: &str = "CSV data";
        let mut records = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(reader)
            .into_records();
        let mut line = 0u64;
        // A leading non-numeric row is taken as a header.
        let mut first = None;
        for rec in records.by_ref() {
            let rec = rec.map_err(|e| Error::format(WHAT, e.to_string()))?;
            line += 1;
            if let Some(row) = parse_csv_row(&rec) {
                first = Some(row);
                break;
            }
            if line > 1 {
                return Err(Error::format(
                    WHAT,
                    format!("line {line}: non-numeric field"),
                ));
            }
        }
        let first = first.ok_or_else(|| Error::format(WHAT, "no data rows"))?;
        if first.is_empty() {
            return Err(Error::format(WHAT, "empty row"));
        }
        Ok(DataReader {
            dim: first.len(),
            source: Source::Csv { records, line },
            declared: None,
            pending: Some(first),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Row count from the file header; `None` for CSV input.
    pub fn declared_len(&self) -> Option<u64> {
        self.declared
    }

    /// Reads up to `max_rows` rows; `None` once the input is exhausted.
    pub fn next_chunk(&mut self, max_rows: usize) -> Result<Option<Vec<f64>>> {
        if max_rows == 0 {
            return Err(Error::invalid("chunk size must be at least 1"));
        }
        let dim = self.dim;
        let mut out = Vec::with_capacity(max_rows.min(1 << 20) * dim);
        match &mut self.source {
            Source::Binary { reader, remaining } => {
                let rows = (*remaining).min(max_rows as u64) as usize;
                out = read_f64s(reader, rows * dim, "data file")?;
                *remaining -= rows as u64;
                if *remaining == 0 {
                    expect_eof(reader, "data file")?;
                }
            }
            Source::Csv { records, line } => {
                if let Some(first) = self.pending.take() {
                    out.extend(first);
                }
                while out.len() < max_rows * dim {
                    let Some(rec) = records.next() else { break };
                    *line += 1;
                    let rec = rec.map_err(|e| Error::format("CSV data", e.to_string()))?;
                    let row = parse_csv_row(&rec).ok_or_else(|| {
                        Error::format("CSV data", format!("line {line}: non-numeric field"))
                    })?;
                    if row.len() != dim {
                        return Err(Error::format(
                            "CSV data",
                            format!("line {line}: expected {dim} fields, found {}", row.len()),
                        ));
                    }
                    out.extend(row);
                }
            }
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset"));
        }
        Ok((!out.is_empty()).then_some(out))
    }
}

/// Loads a whole `CLDATA01` or CSV file.
pub fn load_data(path: impl AsRef<Path>) -> Result<Dataset> {
    let mut reader = DataReader::open(path)?;
    let mut values = Vec::new();
    while let Some(chunk) = reader.next_chunk(1 << 16)? {
        values.extend(chunk);
    }
    if values.is_empty() {
        return Err(Error::format("data file", "no samples"));
    }
    Dataset::new(reader.dim(), values)
}

fn push_reals(out: &mut String, xs: &[f64]) {
    out.push('[');
    for (i, x) in xs.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push_str(&format!("{x:.16e}"));
    }
    out.push(']');
}

/// Serializes a mixture as JSON with 17 significant digits per real.
pub fn gmm_to_string(mix: &Mixture) -> String {
    let mut s = format!(
        "{{\n  \"d\": {},\n  \"k\": {},\n  \"weights\": ",
        mix.dim(),
        mix.len()
    );
    push_reals(&mut s, mix.weights());
    for (key, get) in [
        ("means", GaussianParams::mean as fn(&_) -> &[f64]),
        ("variances", GaussianParams::variances),
    ] {
        s.push_str(&format!(",\n  \"{key}\": [\n"));
        for (i, c) in mix.components().iter().enumerate() {
            s.push_str("    ");
            push_reals(&mut s, get(c));
            s.push_str(if i + 1 < mix.len() { ",\n" } else { "\n" });
        }
        s.push_str("  ]");
    }
    s.push_str("\n}\n");
    s
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GmmDoc {
    d: usize,
    k: usize,
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
}

pub fn parse_gmm(text: &str) -> Result<Mixture> {
    const WHAT: &str = "GMM file";
    let doc: GmmDoc = serde_json::from_str(text).map_err(|e| Error::format(WHAT, e.to_string()))?;
    if doc.k == 0 || doc.d == 0 {
        return Err(Error::format(WHAT, "d and k must be positive"));
    }
    if doc.weights.len() != doc.k || doc.means.len() != doc.k || doc.variances.len() != doc.k {
        return Err(Error::format(
            WHAT,
            format!("expected {} weights, means and variances", doc.k),
        ));
    }
    let components = doc
        .means
        .into_iter()
        .zip(doc.variances)
        .map(|(mu, var)| {
            if mu.len() != doc.d || var.len() != doc.d {
                return Err(Error::format(
                    WHAT,
                    format!("component rows must have {} entries", doc.d),
                ));
            }
            if var.iter().any(|&v| !(v > 0.0)) {
                return Err(Error::format(WHAT, "variances must be positive"));
            }
            GaussianParams::new(mu, var)
        })
        .collect::<Result<Vec<_>>>()?;
    Mixture::new(components, doc.weights).map_err(|e| Error::format(WHAT, e.to_string()))
}

pub fn save_gmm(path: impl AsRef<Path>, mix: &Mixture) -> Result<()> {
    Ok(std::fs::write(path, gmm_to_string(mix))?)
}

pub fn load_gmm(path: impl AsRef<Path>) -> Result<Mixture> {
    parse_gmm(&std::fs::read_to_string(path)?)
}
