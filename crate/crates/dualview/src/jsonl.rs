//! Dataset serialization: canonical JSONL (one candidate set per line) and
//! the packed little-endian binary cache used by the benchmark path.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use dualview_core::data::{Candidate, CandidateSet};

const CACHE_MAGIC: &[u8; 5] = b"DVRK1";

#[derive(Debug)]
pub enum DatasetError {
    Io(std::io::Error),
    /// malformed or invalid record; `line` is 1-based (0 for file-level)
    Invalid { line: usize, message: String },
}

impl fmt::Display for DatasetError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetError::Io(e) => write!(f, "dataset io: {e}"),
            DatasetError::Invalid { line, message } => {
                if *line == 0 {
                    write!(f, "dataset invalid: {message}")
                } else {
                    write!(f, "dataset line {line}: {message}")
                }
            }
        }
    }
}

impl std::error::Error for DatasetError {}

impl From<std::io::Error> for DatasetError {
    fn from(e: std::io::Error) -> Self {
        DatasetError::Io(e)
    }
}

fn validate_record(
    set: &CandidateSet,
    line: usize,
    expected_dim: &mut Option<usize>,
) -> Result<(), DatasetError> {
    let invalid = |message: String| DatasetError::Invalid { line, message };
    if set.candidates.is_empty() {
        return Err(invalid(format!("query '{}' has no candidates", set.query_id)));
    }
    let dim = *expected_dim.get_or_insert(set.query_embedding.len());
    if dim == 0 {
        return Err(invalid(String::from("query embedding is empty")));
    }
    if set.query_embedding.len() != dim {
        return Err(invalid(format!(
            "query embedding has width {}, expected {dim}",
            set.query_embedding.len()
        )));
    }
    for c in &set.candidates {
        if c.embedding.len() != dim {
            return Err(invalid(format!(
                "doc '{}' embedding has width {}, expected {dim}",
                c.doc_id,
                c.embedding.len()
            )));
        }
        if c.label > 1 {
            return Err(invalid(format!(
                "doc '{}' label {} outside {{0,1}}",
                c.doc_id, c.label
            )));
        }
    }
    Ok(())
}

/// Loads and validates a JSONL dataset. All records must share one
/// embedding width (set by the first record); errors carry line numbers.
pub fn load_jsonl(path: &Path) -> Result<Vec<CandidateSet>, DatasetError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    let mut dim = None;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let set: CandidateSet = serde_json::from_str(&line).map_err(|e| DatasetError::Invalid {
            line: line_no,
            message: format!("malformed json: {e}"),
        })?;
        validate_record(&set, line_no, &mut dim)?;
        out.push(set);
    }
    Ok(out)
}

pub fn save_jsonl(path: &Path, dataset: &[CandidateSet]) -> Result<(), DatasetError> {
    let mut w = BufWriter::new(File::create(path)?);
    for set in dataset {
        let line = serde_json::to_string(set).map_err(|e| DatasetError::Invalid {
            line: 0,
            message: format!("serialization failed: {e}"),
        })?;
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

fn write_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn write_f32s(w: &mut impl Write, values: &[f32]) -> std::io::Result<()> {
    w.write_all(&(values.len() as u32).to_le_bytes())?;
    for &v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Packed cache: magic `DVRK1`, record count (u32 LE), then per record the
/// query id and embedding followed by each candidate's id, label byte, and
/// embedding. Strings and float runs are length-prefixed (u32 LE).
pub fn save_cache(path: &Path, dataset: &[CandidateSet]) -> Result<(), DatasetError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CACHE_MAGIC)?;
    w.write_all(&(dataset.len() as u32).to_le_bytes())?;
    for set in dataset {
        write_str(&mut w, &set.query_id)?;
        write_f32s(&mut w, &set.query_embedding)?;
        w.write_all(&(set.candidates.len() as u32).to_le_bytes())?;
        for c in &set.candidates {
            write_str(&mut w, &c.doc_id)?;
            w.write_all(&[c.label])?;
            write_f32s(&mut w, &c.embedding)?;
        }
    }
    w.flush()?;
    Ok(())
}

struct CacheReader<R> {
    inner: R,
}

impl<R: Read> CacheReader<R> {
    fn u32(&mut self) -> Result<u32, DatasetError> {
        let mut buf = [0u8; 4];
        self.inner.read_exact(&mut buf)?;
        Ok(u32::from_le_bytes(buf))
    }

    fn string(&mut self) -> Result<String, DatasetError> {
        let len = self.u32()? as usize;
        if len > 1 << 20 {
            return Err(DatasetError::Invalid {
                line: 0,
                message: format!("string length {len} is implausible"),
            });
        }
        let mut buf = vec![0u8; len];
        self.inner.read_exact(&mut buf)?;
        String::from_utf8(buf).map_err(|_| DatasetError::Invalid {
            line: 0,
            message: String::from("string is not valid utf-8"),
        })
    }

    fn f32s(&mut self) -> Result<Vec<f32>, DatasetError> {
        let len = self.u32()? as usize;
        let mut out = Vec::with_capacity(len);
        let mut buf = [0u8; 4];
        for _ in 0..len {
            self.inner.read_exact(&mut buf)?;
            out.push(f32::from_le_bytes(buf));
        }
        Ok(out)
    }
}

pub fn load_cache(path: &Path) -> Result<Vec<CandidateSet>, DatasetError> {
    let mut r = CacheReader {
        inner: BufReader::new(File::open(path)?),
    };
    let mut magic = [0u8; 5];
    r.inner.read_exact(&mut magic)?;
    if &magic != CACHE_MAGIC {
        return Err(DatasetError::Invalid {
            line: 0,
            message: format!("bad magic {magic:?}, not a DVRK1 cache"),
        });
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count);
    let mut dim = None;
    for i in 0..count {
        let query_id = r.string()?;
        let query_embedding = r.f32s()?;
        let n = r.u32()? as usize;
        let mut candidates = Vec::with_capacity(n);
        for _ in 0..n {
            let doc_id = r.string()?;
            let mut label = [0u8; 1];
            r.inner.read_exact(&mut label)?;
            candidates.push(Candidate {
                doc_id,
                embedding: r.f32s()?,
                label: label[0],
            });
        }
        let set = CandidateSet {
            query_id,
            query_embedding,
            candidates,
        };
        validate_record(&set, i + 1, &mut dim)?;
        out.push(set);
    }
    Ok(out)
}

/// Loads either format by extension: `.bin`/`.cache` as packed cache,
/// anything else as JSONL.
pub fn load_dataset(path: &Path) -> Result<Vec<CandidateSet>, DatasetError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("bin") | Some("cache") => load_cache(path),
        _ => load_jsonl(path),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use dualview_core::data::{generate_synthetic, SyntheticMode, SyntheticSpec};

    fn sample_dataset() -> Vec<CandidateSet> {
        generate_synthetic(&SyntheticSpec {
            mode: SyntheticMode::ComplementaryPair,
            n_queries: 5,
            n_candidates: 6,
            embed_dim: 16,
            noise_sigma: 0.2,
            n_gold: 2,
            seed: 11,
        })
        .unwrap()
    }

    #[test]
    fn jsonl_round_trip_second_write_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.jsonl");
        let b = dir.path().join("b.jsonl");
        let data = sample_dataset();
        save_jsonl(&a, &data).unwrap();
        let loaded = load_jsonl(&a).unwrap();
        assert_eq!(loaded, data);
        save_jsonl(&b, &loaded).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn cache_round_trip_second_write_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.bin");
        let b = dir.path().join("b.bin");
        let data = sample_dataset();
        save_cache(&a, &data).unwrap();
        let loaded = load_dataset(&a).unwrap();
        assert_eq!(loaded, data);
        save_cache(&b, &loaded).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn empty_file_loads_as_empty_stream() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.jsonl");
        std::fs::write(&p, "").unwrap();
        assert!(load_jsonl(&p).unwrap().is_empty());
    }

    #[test]
    fn malformed_json_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.jsonl");
        let data = sample_dataset();
        let good = serde_json::to_string(&data[0]).unwrap();
        std::fs::write(&p, format!("{good}\n{{not json\n")).unwrap();
        match load_jsonl(&p) {
            Err(DatasetError::Invalid { line: 2, .. }) => {}
            other => panic!("expected line-2 error, got {other:?}"),
        }
    }

    #[test]
    fn inconsistent_width_names_line_and_expectation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.jsonl");
        let mut data = sample_dataset();
        data[1].candidates[0].embedding.push(0.0);
        save_jsonl(&p, &data).unwrap();
        match load_jsonl(&p) {
            Err(DatasetError::Invalid { line: 2, message }) => {
                assert!(message.contains("width 17"), "{message}");
                assert!(message.contains("expected 16"), "{message}");
            }
            other => panic!("expected width error, got {other:?}"),
        }
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.jsonl");
        let mut data = sample_dataset();
        data[0].candidates[2].label = 3;
        save_jsonl(&p, &data).unwrap();
        match load_jsonl(&p) {
            Err(DatasetError::Invalid { line: 1, message }) => {
                assert!(message.contains("label 3"), "{message}");
            }
            other => panic!("expected label error, got {other:?}"),
        }
    }

    #[test]
    fn cache_rejects_wrong_magic() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("junk.bin");
        std::fs::write(&p, b"NOPE!xxxx").unwrap();
        assert!(matches!(
            load_cache(&p),
            Err(DatasetError::Invalid { line: 0, .. })
        ));
    }
}
