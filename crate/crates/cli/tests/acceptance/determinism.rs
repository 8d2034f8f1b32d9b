//! Every corpus scenario, run twice, writes the same trace bytes and the
//! same metrics.

use std::io::Write;
use std::path::Path;
use std::sync::{Arc, Mutex};

use xchange_sim::{run_with_trace, Scenario};

use crate::Outcome;

#[derive(Clone, Default)]
struct Shared(Arc<Mutex<Vec<u8>>>);

impl Write for Shared {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().unwrap().extend_from_slice(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

/// Trace bytes, trace hash and summary metrics of one run.
type Replay = (Vec<u8>, String, Vec<(&'static str, f64)>);

fn once(s: &Scenario) -> Result<Replay, String> {
    let buf = Shared::default();
    let out = run_with_trace(s, Some(Box::new(buf.clone()))).map_err(|e| e.to_string())?;
    let bytes = buf.0.lock().unwrap().clone();
    Ok((bytes, out.trace_hash, out.metrics.summary.fields()))
}

pub fn check() -> Outcome {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut files: Vec<_> = match std::fs::read_dir(&dir) {
        Ok(d) => {
            d.filter_map(|e| e.ok()).map(|e| e.path()).filter(|p| p.extension().is_some_and(|x| x == "toml")).collect()
        }
        Err(e) => return Outcome::new(false, format!("{}: {e}", dir.display())),
    };
    files.sort();
    for f in &files {
        let name = f.file_name().unwrap().to_string_lossy().into_owned();
        let s = match Scenario::load(f) {
            Ok(s) => s,
            Err(e) => return Outcome::new(false, format!("{name}: {e}")),
        };
        let (a, b) = match (once(&s), once(&s)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) | (_, Err(e)) => return Outcome::new(false, format!("{name}: {e}")),
        };
        if a.0.is_empty() || a.0 != b.0 || a.1 != b.1 {
            return Outcome::new(false, format!("{name}: traces differ"));
        }
        // Compare bit patterns so that a NaN metric still counts as equal.
        let bits = |m: &[(&str, f64)]| m.iter().map(|(k, v)| (k.to_string(), v.to_bits())).collect::<Vec<_>>();
        if bits(&a.2) != bits(&b.2) {
            return Outcome::new(false, format!("{name}: metrics differ"));
        }
    }
    Outcome::new(
        files.len() >= 8,
        format!("{} corpus scenarios reproduce byte-identical traces and metrics", files.len()),
    )
}
