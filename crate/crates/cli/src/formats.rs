//! On-disk formats: score and property tensors, fingerprints, cluster maps
//! and sample sets.

use std::fs;
use std::io::Write;
use std::path::Path;

use delgfn::cluster::{ClusterMap, FingerprintSet};
use delgfn::metrics::PropertyTable;
use delgfn::{CycleSpec, DesignState, SampleEntry, SampleSet, ScoreTable, SizeConstraint, Tensor3};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const SCORE_MAGIC: &[u8; 4] = b"DELS";
pub const PROPERTY_MAGIC: &[u8; 4] = b"DELP";
pub const FORMAT_VERSION: u16 = 1;

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(bytes).map_err(|e| CliError::io(path, e))
}

fn read_file(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

/// Cursor over a byte buffer that reports offsets in its errors.
struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> CliResult<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(CliError::parse(
                self.path,
                format!("truncated {what} at byte {} (need {n} bytes)", self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> CliResult<u16> {
        Ok(u16::from_le_bytes(
            self.take(2, what)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self, what: &str) -> CliResult<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    fn header(&mut self, magic: &[u8; 4]) -> CliResult<()> {
        let m = self.take(4, "magic")?;
        if m != magic {
            return Err(CliError::parse(
                self.path,
                format!(
                    "bad magic {:?} at byte 0, expected {:?}",
                    String::from_utf8_lossy(m),
                    String::from_utf8_lossy(magic)
                ),
            ));
        }
        let v = self.u16("version")?;
        if v != FORMAT_VERSION {
            return Err(CliError::parse(
                self.path,
                format!("unsupported version {v} at byte 4"),
            ));
        }
        Ok(())
    }

    /// Three dims then exactly that many little-endian f32 values.
    fn tensor(&mut self) -> CliResult<([usize; 3], Vec<f32>, usize)> {
        let mut dims = [0usize; 3];
        for d in dims.iter_mut() {
            let at = self.pos;
            *d = self.u32("dims")? as usize;
            if *d == 0 {
                return Err(CliError::parse(
                    self.path,
                    format!("zero dimension at byte {at}"),
                ));
            }
        }
        let cells = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let remaining = self.bytes.len() - self.pos;
        match cells {
            Some(c) if c.checked_mul(4) == Some(remaining) => {}
            _ => {
                return Err(CliError::parse(
                    self.path,
                    format!(
                        "header dims {dims:?} disagree with payload of {remaining} bytes starting at byte {}",
                        self.pos
                    ),
                ))
            }
        }
        let start = self.pos;
        let values = self
            .take(remaining, "payload")?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok((dims, values, start))
    }
}

fn tensor_bytes(magic: &[u8; 4], name: Option<&str>, t: &Tensor3) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + t.cells() * 4);
    out.extend_from_slice(magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    if let Some(name) = name {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
    }
    for d in t.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn store_score_table(path: &Path, table: &ScoreTable) -> CliResult<()> {
    write_file(path, &tensor_bytes(SCORE_MAGIC, None, table.tensor()))
}

fn check_scores(path: &Path, values: &[f32], payload_start: Option<usize>) -> CliResult<()> {
    if let Some(i) = values.iter().position(|v| !(0.0..=1.0).contains(v)) {
        let at = payload_start.map_or(String::new(), |s| format!(" (byte {})", s + 4 * i));
        return Err(CliError::parse(
            path,
            format!(
                "score {} at flat index {i}{at} is outside [0, 1]",
                values[i]
            ),
        ));
    }
    Ok(())
}

/// Loads a score table, binary or CSV (`i1,i2,i3,p` lines) by extension.
pub fn load_score_table(path: &Path) -> CliResult<ScoreTable> {
    if path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
    {
        return load_score_csv(path);
    }
    let bytes = read_file(path)?;
    let mut r = Reader {
        path,
        bytes: &bytes,
        pos: 0,
    };
    r.header(SCORE_MAGIC)?;
    let (dims, values, start) = r.tensor()?;
    check_scores(path, &values, Some(start))?;
    ScoreTable::new(dims, values).map_err(|e| CliError::parse(path, e))
}

#[derive(Deserialize)]
struct CsvRow(usize, usize, usize, f32);

fn load_score_csv(path: &Path) -> CliResult<ScoreTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::parse(path, e))?;
    let mut rows = Vec::new();
    for (line, rec) in rdr.deserialize::<CsvRow>().enumerate() {
        rows.push(rec.map_err(|e| CliError::parse(path, format!("row {}: {e}", line + 1)))?);
    }
    if rows.is_empty() {
        return Err(CliError::parse(path, "no rows"));
    }
    let mut dims = [0usize; 3];
    for r in &rows {
        dims[0] = dims[0].max(r.0 + 1);
        dims[1] = dims[1].max(r.1 + 1);
        dims[2] = dims[2].max(r.2 + 1);
    }
    let cells: usize = dims.iter().product();
    let mut values = vec![f32::NAN; cells];
    for (n, r) in rows.iter().enumerate() {
        let idx = (r.0 * dims[1] + r.1) * dims[2] + r.2;
        if !values[idx].is_nan() {
            return Err(CliError::parse(
                path,
                format!("row {}: duplicate cell ({}, {}, {})", n + 1, r.0, r.1, r.2),
            ));
        }
        values[idx] = r.3;
    }
    if let Some(i) = values.iter().position(|v| v.is_nan()) {
        return Err(CliError::parse(
            path,
            format!("missing cell at flat index {i} of dims {dims:?}"),
        ));
    }
    check_scores(path, &values, None)?;
    ScoreTable::new(dims, values).map_err(|e| CliError::parse(path, e))
}

pub fn store_property_table(path: &Path, prop: &PropertyTable) -> CliResult<()> {
    write_file(
        path,
        &tensor_bytes(PROPERTY_MAGIC, Some(&prop.name), &prop.values),
    )
}

pub fn load_property_table(path: &Path) -> CliResult<PropertyTable> {
    let bytes = read_file(path)?;
    let mut r = Reader {
        path,
        bytes: &bytes,
        pos: 0,
    };
    r.header(PROPERTY_MAGIC)?;
    let len = r.u32("name length")? as usize;
    let at = r.pos;
    let name = std::str::from_utf8(r.take(len, "name")?)
        .map_err(|_| CliError::parse(path, format!("name at byte {at} is not UTF-8")))?
        .to_string();
    let (dims, values, _) = r.tensor()?;
    let values = Tensor3::new(dims, values).map_err(|e| CliError::parse(path, e))?;
    Ok(PropertyTable { name, values })
}

/// Fingerprint text: `#cycle k` headers, then one fixed-width 0/1 line per
/// block.
pub fn load_fingerprints(path: &Path) -> CliResult<FingerprintSet> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut cycles: Vec<Vec<DesignState>> = Vec::new();
    let mut width: Option<usize> = None;
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("#cycle") {
            let k: usize = rest
                .trim()
                .parse()
                .map_err(|_| CliError::parse(path, format!("line {}: bad cycle header", n + 1)))?;
            if k != cycles.len() + 1 {
                return Err(CliError::parse(
                    path,
                    format!("line {}: cycle {k} out of order", n + 1),
                ));
            }
            cycles.push(Vec::new());
            continue;
        }
        let Some(cur) = cycles.last_mut() else {
            return Err(CliError::parse(
                path,
                format!("line {}: fingerprint before any #cycle header", n + 1),
            ));
        };
        if let Some(c) = line.chars().find(|c| *c != '0' && *c != '1') {
            return Err(CliError::parse(
                path,
                format!("line {}: unexpected character {c:?}", n + 1),
            ));
        }
        let w = *width.get_or_insert(line.len());
        if line.len() != w {
            return Err(CliError::parse(
                path,
                format!("line {}: width {} differs from {w}", n + 1, line.len()),
            ));
        }
        cur.push(DesignState::parse(line).map_err(|e| CliError::parse(path, e))?);
    }
    FingerprintSet::new(cycles).map_err(|e| CliError::parse(path, e))
}

pub fn store_fingerprints(path: &Path, fps: &FingerprintSet) -> CliResult<()> {
    let mut text = String::new();
    for (c, blocks) in fps.cycles().iter().enumerate() {
        text.push_str(&format!("#cycle {}\n", c + 1));
        for b in blocks {
            text.push_str(&b.to_string());
            text.push('\n');
        }
    }
    write_file(path, text.as_bytes())
}

pub fn store_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Data(format!("serializing {}: {e}", path.display())))?;
    s.push('\n');
    write_file(path, s.as_bytes())
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::parse(path, e))
}

pub fn load_cluster_map(path: &Path) -> CliResult<ClusterMap> {
    load_json(path)
}

#[derive(Serialize, Deserialize)]
struct SampleFile {
    sizes: CycleSpec,
    constraint: SizeConstraint,
    beta: f64,
    samples: Vec<SampleLine>,
}

#[derive(Serialize, Deserialize)]
struct SampleLine {
    design: String,
    log_reward: f64,
    mean_score: f64,
}

pub fn store_samples(path: &Path, set: &SampleSet) -> CliResult<()> {
    store_json(
        path,
        &SampleFile {
            sizes: set.spec.clone(),
            constraint: set.constraint,
            beta: set.beta,
            samples: set
                .entries
                .iter()
                .map(|e| SampleLine {
                    design: e.state.to_cycle_string(&set.spec),
                    log_reward: e.log_reward,
                    mean_score: e.mean_score,
                })
                .collect(),
        },
    )
}

pub fn load_samples(path: &Path) -> CliResult<SampleSet> {
    let f: SampleFile = load_json(path)?;
    let mut set = SampleSet::new(f.sizes, f.constraint, f.beta);
    for (i, s) in f.samples.into_iter().enumerate() {
        let state = DesignState::parse(&s.design)
            .map_err(|e| CliError::parse(path, format!("sample {i}: {e}")))?;
        if state.len() != set.spec.total_bits() {
            return Err(CliError::parse(
                path,
                format!(
                    "sample {i}: {} bits, expected {}",
                    state.len(),
                    set.spec.total_bits()
                ),
            ));
        }
        set.entries.push(SampleEntry {
            state,
            log_reward: s.log_reward,
            mean_score: s.mean_score,
        });
    }
    set.validate(1e-9).map_err(|e| CliError::parse(path, e))?;
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> ScoreTable {
        ScoreTable::from_fn([2, 3, 4], |i, j, k| {
            ((i * 12 + j * 4 + k) as f32 + 0.5) / 24.0
        })
        .unwrap()
    }

    #[test]
    fn binary_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.dels");
        let t = table();
        store_score_table(&p, &t).unwrap();
        let back = load_score_table(&p).unwrap();
        let bits = |t: &ScoreTable| {
            t.tensor()
                .values()
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(bits(&back), bits(&t));
        assert_eq!(back.dims(), [2, 3, 4]);
    }

    #[test]
    fn malformed_tables_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.dels");
        store_score_table(&p, &table()).unwrap();
        let good = fs::read(&p).unwrap();

        let mut short = good.clone();
        short.truncate(good.len() - 4);
        fs::write(&p, &short).unwrap();
        let e = load_score_table(&p).unwrap_err().to_string();
        assert!(e.contains("disagree"), "{e}");

        let mut bad = good.clone();
        bad[0] = b'X';
        fs::write(&p, &bad).unwrap();
        assert!(load_score_table(&p)
            .unwrap_err()
            .to_string()
            .contains("magic"));

        let mut range = good.clone();
        let at = 18 + 4 * 5;
        range[at..at + 4].copy_from_slice(&1.5f32.to_le_bytes());
        fs::write(&p, &range).unwrap();
        let e = load_score_table(&p).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("flat index 5"), "{e}");
    }

    #[test]
    fn csv_tables_load() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let mut s = String::from("# i1,i2,i3,p\n");
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    s.push_str(&format!("{i},{j},{k},{}\n", (i + j + k) as f32 / 4.0));
                }
            }
        }
        fs::write(&p, s).unwrap();
        let t = load_score_table(&p).unwrap();
        assert_eq!(t.get(1, 1, 1), 0.75);
        fs::write(&p, "0,0,0,0.1\n1,1,1,0.2\n").unwrap();
        assert!(load_score_table(&p).is_err());
    }

    #[test]
    fn property_and_fingerprint_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let prop = PropertyTable {
            name: "clogp".into(),
            values: Tensor3::from_fn([2, 2, 3], |i, j, k| (i + j + k) as f32 - 1.5).unwrap(),
        };
        let p = dir.path().join("p.delp");
        store_property_table(&p, &prop).unwrap();
        assert_eq!(load_property_table(&p).unwrap(), prop);

        let f = dir.path().join("fp.txt");
        fs::write(&f, "#cycle 1\n1100\n0011\n#cycle 2\n1111\n").unwrap();
        let fps = load_fingerprints(&f).unwrap();
        assert_eq!(fps.cycles().len(), 2);
        store_fingerprints(&f, &fps).unwrap();
        assert_eq!(load_fingerprints(&f).unwrap().cycles(), fps.cycles());
        fs::write(&f, "#cycle 1\n1100\n001\n").unwrap();
        assert!(load_fingerprints(&f)
            .unwrap_err()
            .to_string()
            .contains("width"));
    }
}
