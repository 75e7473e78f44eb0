//! Coverage readers for the gcov JSON intermediate format and for the
//! crate's own statement-list exchange format.

use std::io::Read;

use flate2::read::GzDecoder;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{relativize, CoverageSet, StatementId};

#[derive(Debug, Error)]
pub enum CoverageError {
    #[error("malformed coverage at byte {offset}: {message}")]
    Malformed { offset: usize, message: String },
}

impl CoverageError {
    fn at(offset: usize, message: impl Into<String>) -> Self {
        CoverageError::Malformed {
            offset,
            message: message.into(),
        }
    }

    fn from_json(text: &[u8], err: serde_json::Error) -> Self {
        CoverageError::at(byte_offset(text, err.line(), err.column()), err.to_string())
    }
}

/// serde_json reports 1-based line/column; convert to a byte offset.
fn byte_offset(text: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut current = 1;
    let mut start = 0;
    for (i, b) in text.iter().enumerate() {
        if current == line {
            break;
        }
        if *b == b'\n' {
            current += 1;
            start = i + 1;
        }
    }
    (start + column.saturating_sub(1)).min(text.len())
}

fn maybe_gunzip(bytes: &[u8]) -> Result<Vec<u8>, CoverageError> {
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(bytes)
            .read_to_end(&mut out)
            .map_err(|e| CoverageError::at(0, format!("gzip: {e}")))?;
        Ok(out)
    } else {
        Ok(bytes.to_vec())
    }
}

#[derive(Deserialize)]
struct GcovDocument {
    #[serde(default)]
    current_working_directory: Option<String>,
    #[serde(default)]
    files: Vec<GcovFile>,
}

#[derive(Deserialize)]
struct GcovFile {
    file: String,
    #[serde(default)]
    lines: Vec<GcovLine>,
}

#[derive(Deserialize)]
struct GcovLine {
    line_number: u32,
    count: u64,
    #[serde(default)]
    function_name: Option<String>,
}

/// Parses a (possibly gzip-compressed) gcov JSON document, keeping lines
/// with a positive execution count. Paths are made relative to
/// `source_root`; files that fall outside it are skipped.
pub fn parse_gcov_json(bytes: &[u8], source_root: Option<&str>) -> Result<CoverageSet, CoverageError> {
    let text = maybe_gunzip(bytes)?;
    let doc: GcovDocument =
        serde_json::from_slice(&text).map_err(|e| CoverageError::from_json(&text, e))?;
    let cwd = doc.current_working_directory.as_deref();
    let mut out = CoverageSet::new();
    for file in &doc.files {
        let joined = match cwd {
            Some(dir) if !file.file.starts_with('/') && dir.starts_with('/') => {
                format!("{}/{}", dir, file.file)
            }
            _ => file.file.clone(),
        };
        let Some(rel) = relativize(&joined, source_root) else {
            log::debug!("skipping coverage for `{}` outside source root", file.file);
            continue;
        };
        for line in &file.lines {
            if line.count == 0 || line.line_number == 0 {
                continue;
            }
            // Safe: rel is normalized and relative, line is non-zero.
            let id = StatementId::new(&rel, line.line_number, line.function_name.as_deref())
                .expect("normalized statement");
            out.insert(id);
        }
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct NativeDocument {
    version: u32,
    statements: Vec<StatementId>,
}

pub const NATIVE_VERSION: u32 = 1;

pub fn parse_native_json(bytes: &[u8]) -> Result<CoverageSet, CoverageError> {
    let text = maybe_gunzip(bytes)?;
    let doc: NativeDocument =
        serde_json::from_slice(&text).map_err(|e| CoverageError::from_json(&text, e))?;
    if doc.version != NATIVE_VERSION {
        return Err(CoverageError::at(0, format!("unsupported version {}", doc.version)));
    }
    let mut out = CoverageSet::new();
    for raw in doc.statements {
        let id = StatementId::new(&raw.file, raw.line, raw.function.as_deref())
            .map_err(|e| CoverageError::at(0, e.to_string()))?;
        if !out.contains(&id) {
            out.insert(id);
        }
    }
    Ok(out)
}

/// Canonical native encoding: compact JSON, statements sorted by (file, line).
pub fn emit_native_json(coverage: &CoverageSet) -> String {
    let doc = NativeDocument {
        version: NATIVE_VERSION,
        statements: coverage.iter().cloned().collect(),
    };
    serde_json::to_string(&doc).expect("coverage serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use flate2::write::GzEncoder;
    use flate2::Compression;
    use proptest::prelude::*;
    use std::io::Write;

    fn sid(f: &str, l: u32) -> StatementId {
        StatementId::new(f, l, None).unwrap()
    }

    #[test]
    fn gcov_count_filter() {
        let doc = r#"{"format_version":"1","files":[{"file":"lib/f.c","lines":[
            {"line_number":5,"count":0,"function_name":"g"},
            {"line_number":6,"count":3,"function_name":"g"},
            {"line_number":9,"count":1,"function_name":"h"}]}]}"#;
        let cov = parse_gcov_json(doc.as_bytes(), None).unwrap();
        let expect: CoverageSet = [sid("lib/f.c", 6), sid("lib/f.c", 9)].into_iter().collect();
        assert_eq!(cov, expect);
        assert_eq!(cov.iter().next().unwrap().function.as_deref(), Some("g"));
    }

    #[test]
    fn gcov_empty_files() {
        assert!(parse_gcov_json(br#"{"files":[]}"#, None).unwrap().is_empty());
    }

    #[test]
    fn gcov_duplicate_line_records() {
        let doc = r#"{"files":[{"file":"a.c","lines":[
            {"line_number":3,"count":0},{"line_number":3,"count":2}]},
            {"file":"a.c","lines":[{"line_number":3,"count":1}]}]}"#;
        let cov = parse_gcov_json(doc.as_bytes(), None).unwrap();
        assert_eq!(cov.len(), 1);
    }

    #[test]
    fn gcov_gzip_and_root() {
        let doc = r#"{"current_working_directory":"/build/llvm","files":[
            {"file":"/build/llvm/lib/X.cpp","lines":[{"line_number":2,"count":1}]},
            {"file":"lib/Y.cpp","lines":[{"line_number":7,"count":4}]},
            {"file":"/usr/include/stdio.h","lines":[{"line_number":1,"count":9}]}]}"#;
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(doc.as_bytes()).unwrap();
        let gz = enc.finish().unwrap();
        let cov = parse_gcov_json(&gz, Some("/build/llvm")).unwrap();
        let expect: CoverageSet = [sid("lib/X.cpp", 2), sid("lib/Y.cpp", 7)].into_iter().collect();
        assert_eq!(cov, expect);
    }

    #[test]
    fn malformed_reports_offset() {
        let doc = b"{\"files\":[\n{\"file\": 3}]}";
        match parse_gcov_json(doc, None) {
            Err(CoverageError::Malformed { offset, .. }) => assert!(offset > 10 && offset <= doc.len()),
            other => panic!("expected error, got {other:?}"),
        }
        assert!(parse_native_json(b"{\"version\":1,\"statements\":[{\"file\":\"a\",\"line\":0}]}").is_err());
        assert!(parse_native_json(b"{\"version\":2,\"statements\":[]}").is_err());
    }

    #[test]
    fn native_empty_and_large() {
        assert!(parse_native_json(br#"{"version":1,"statements":[]}"#).unwrap().is_empty());
        let mut body = String::from(r#"{"version":1,"statements":["#);
        for i in 0..10_000u32 {
            if i > 0 {
                body.push(',');
            }
            body.push_str(&format!(r#"{{"file":"d{}/f.c","line":{},"function":"fn{}"}}"#, i % 7, i + 1, i % 13));
        }
        body.push_str("]}");
        assert_eq!(parse_native_json(body.as_bytes()).unwrap().len(), 10_000);
    }

    fn arb_cov() -> impl Strategy<Value = CoverageSet> {
        proptest::collection::vec((0u8..4, 1u32..500, proptest::option::of("[a-z]{1,6}")), 0..60).prop_map(|v| {
            let mut out = CoverageSet::new();
            for (f, l, func) in v {
                let id = StatementId::new(&format!("src/m{f}.c"), l, func.as_deref()).unwrap();
                if !out.contains(&id) {
                    out.insert(id);
                }
            }
            out
        })
    }

    proptest! {
        #[test]
        fn native_round_trip(cov in arb_cov()) {
            let text = emit_native_json(&cov);
            let back = parse_native_json(text.as_bytes()).unwrap();
            prop_assert_eq!(&back, &cov);
            prop_assert_eq!(emit_native_json(&back), text);
            for (a, b) in back.iter().zip(cov.iter()) {
                prop_assert_eq!(&a.function, &b.function);
            }
        }
    }
}
