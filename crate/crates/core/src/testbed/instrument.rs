use std::collections::{HashMap, HashSet};
use std::sync::OnceLock;

use serde::Serialize;

use crate::model::{CoverageSet, StatementId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PseudoStatement {
    pub line: u32,
    pub function: &'static str,
    pub label: &'static str,
}

/// One instrumented component of the toy compiler and the pseudo-statements
/// it can record.
#[derive(Debug, Clone, Serialize)]
pub struct PassSpec {
    pub name: &'static str,
    pub virtual_file: &'static str,
    pub statements: Vec<PseudoStatement>,
}

/// Declares the statement table of one virtual source file: a `FILE`
/// constant, one `u32` constant per statement and a `spec()` constructor.
macro_rules! pseudo_statements {
    ($name:literal, $file:literal; $( $id:ident = $line:literal in $func:literal, $label:literal; )*) => {
        pub const FILE: &str = $file;
        $( pub const $id: u32 = $line; )*
        pub fn spec() -> $crate::testbed::instrument::PassSpec {
            $crate::testbed::instrument::PassSpec {
                name: $name,
                virtual_file: $file,
                statements: vec![
                    $( $crate::testbed::instrument::PseudoStatement { line: $line, function: $func, label: $label }, )*
                ],
            }
        }
    };
}
pub(crate) use pseudo_statements;

/// Records which pseudo-statements executed during one pipeline run.
#[derive(Debug, Default)]
pub struct Trace {
    enabled: bool,
    hits: HashSet<(&'static str, u32)>,
}

impl Trace {
    pub fn new(enabled: bool) -> Self {
        Trace {
            enabled,
            hits: HashSet::new(),
        }
    }

    #[inline]
    pub fn hit(&mut self, file: &'static str, line: u32) {
        if self.enabled {
            self.hits.insert((file, line));
        }
    }

    pub fn into_coverage(self) -> CoverageSet {
        let index = function_index();
        self.hits
            .into_iter()
            .map(|(file, line)| {
                let func = index.get(&(file, line)).copied();
                debug_assert!(func.is_some(), "unregistered statement {file}:{line}");
                StatementId::new(file, line, func).expect("virtual statement")
            })
            .collect()
    }
}

fn function_index() -> &'static HashMap<(&'static str, u32), &'static str> {
    static INDEX: OnceLock<HashMap<(&'static str, u32), &'static str>> = OnceLock::new();
    INDEX.get_or_init(|| {
        let mut m = HashMap::new();
        for spec in super::passes::all_specs() {
            for st in spec.statements {
                let prev = m.insert((spec.virtual_file, st.line), st.function);
                assert!(prev.is_none(), "duplicate line {} in {}", st.line, spec.virtual_file);
            }
        }
        m
    })
}
