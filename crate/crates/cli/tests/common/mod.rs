#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use serde_json::Value;

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
    pub elapsed: Duration,
}

impl Run {
    pub fn json(&self) -> Value {
        serde_json::from_str(self.stdout.trim()).unwrap_or_else(|e| panic!("{e}: {}", self.stdout))
    }
}

pub fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn corpus(name: &str) -> PathBuf {
    root().join("corpus").join(name)
}

/// Copies a corpus file into `dir`, so that outputs land next to the copy.
pub fn stage(dir: &Path, name: &str) -> PathBuf {
    let to = dir.join(name);
    std::fs::copy(corpus(name), &to).unwrap();
    to
}

pub fn phaseforge(args: &[&str]) -> Run {
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_phaseforge"))
        .args(args)
        .output()
        .expect("run phaseforge");
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
        elapsed: start.elapsed(),
    }
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn load_schema(name: &str) -> Value {
    let text = std::fs::read_to_string(root().join("docs/schemas").join(name)).unwrap();
    serde_json::from_str(&text).unwrap()
}

/// Replaces references to the trace schema by the schema itself.
fn inline_trace(v: &mut Value, trace: &Value) {
    match v {
        Value::Object(m) => {
            if m.get("$ref").and_then(Value::as_str) == Some("trace.schema.json") {
                *v = trace.clone();
                return;
            }
            for x in m.values_mut() {
                inline_trace(x, trace);
            }
        }
        Value::Array(xs) => xs.iter_mut().for_each(|x| inline_trace(x, trace)),
        _ => {}
    }
}

/// Validation errors of `doc` against the shipped schema `name`.
pub fn schema_errors(name: &str, doc: &Value) -> Vec<String> {
    let trace = load_schema("trace.schema.json");
    let mut schema = load_schema(name);
    inline_trace(&mut schema, &trace);
    let validator = jsonschema::validator_for(&schema).unwrap();
    validator.iter_errors(doc).map(|e| e.to_string()).collect()
}
