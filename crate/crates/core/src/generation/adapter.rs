//! Adapter for external sequence-to-sequence models: a long-running child
//! process speaking one JSON object per line on stdin/stdout.
//!
//! Requests:
//!   {"op":"generate","input":"...","max_length":128}
//!   {"op":"train_step","batch":[{"input":"...","target":"..."}],"lr":4e-5}
//!   {"op":"fingerprint"}
//!   {"op":"save","path":"..."}
//! Responses: {"output": "..."} | {"loss": 0.1} | {"digest": "..."} |
//! {"ok": true}, or {"error": "..."}.
//!
//! The adapter program owns its model entirely, including how the schema's
//! mask and separator tokens map onto its vocabulary.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde_json::{json, Value};

use crate::generation::{ComposedInput, EngineError, Seq2SeqBackend, TrainingExample};

pub struct CommandBackend {
    io: Mutex<AdapterIo>,
    program: String,
}

struct AdapterIo {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl CommandBackend {
    /// Spawns the adapter process. Requests are serialized through a mutex,
    /// so calls are effectively single-threaded.
    pub fn spawn(program: &Path, args: &[String]) -> Result<Self, EngineError> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| EngineError::Backend(format!("spawn {}: {e}", program.display())))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Self {
            io: Mutex::new(AdapterIo {
                child,
                stdin,
                stdout,
            }),
            program: program.display().to_string(),
        })
    }

    fn request(&self, payload: Value) -> Result<Value, EngineError> {
        let mut io = self.io.lock().expect("adapter mutex");
        let line = serde_json::to_string(&payload).expect("serializable");
        writeln!(io.stdin, "{line}")
            .and_then(|_| io.stdin.flush())
            .map_err(|e| EngineError::Backend(format!("adapter {} write: {e}", self.program)))?;
        let mut response = String::new();
        io.stdout
            .read_line(&mut response)
            .map_err(|e| EngineError::Backend(format!("adapter {} read: {e}", self.program)))?;
        if response.is_empty() {
            return Err(EngineError::Backend(format!(
                "adapter {} closed its stdout",
                self.program
            )));
        }
        let value: Value = serde_json::from_str(&response)
            .map_err(|e| EngineError::Backend(format!("adapter {} bad response: {e}", self.program)))?;
        if let Some(err) = value.get("error").and_then(Value::as_str) {
            return Err(EngineError::Backend(format!(
                "adapter {} reported: {err}",
                self.program
            )));
        }
        Ok(value)
    }
}

impl Drop for CommandBackend {
    fn drop(&mut self) {
        if let Ok(mut io) = self.io.lock() {
            let _ = io.child.kill();
            let _ = io.child.wait();
        }
    }
}

impl Seq2SeqBackend for CommandBackend {
    fn kind(&self) -> &'static str {
        "adapter"
    }

    fn train_step(&mut self, batch: &[TrainingExample], lr: f32) -> Result<f32, EngineError> {
        let payload = json!({
            "op": "train_step",
            "batch": batch
                .iter()
                .map(|e| json!({"input": e.input.text, "target": e.target}))
                .collect::<Vec<_>>(),
            "lr": lr,
        });
        let response = self.request(payload)?;
        response
            .get("loss")
            .and_then(Value::as_f64)
            .map(|l| l as f32)
            .ok_or_else(|| EngineError::Backend("adapter response missing 'loss'".into()))
    }

    fn generate(&self, input: &ComposedInput, max_length: usize) -> Result<String, EngineError> {
        let response = self.request(json!({
            "op": "generate",
            "input": input.text,
            "max_length": max_length,
        }))?;
        response
            .get("output")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| EngineError::Backend("adapter response missing 'output'".into()))
    }

    fn parameters_fingerprint(&self) -> String {
        self.request(json!({"op": "fingerprint"}))
            .ok()
            .and_then(|v| v.get("digest").and_then(Value::as_str).map(str::to_string))
            .unwrap_or_else(|| "adapter-fingerprint-unavailable".to_string())
    }

    fn save_model(&self, path: &Path) -> Result<(), EngineError> {
        self.request(json!({"op": "save", "path": path.display().to_string()}))?;
        Ok(())
    }
}
