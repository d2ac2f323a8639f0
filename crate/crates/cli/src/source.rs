//! Where `log f` comes from: a named builtin or an external evaluator process.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::{Arc, Mutex};

use anyhow::{anyhow, bail, Context};
use lapdiag::integrand::{Banana, Gaussian, IntegrandSpec, LogDensity, ProductT, StudentT};
use lapdiag::Error;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Points per request line sent to an external evaluator.
pub const BATCH: usize = 4096;

/// Parses `name[:k=v,...]`.
pub fn builtin(spec: &str) -> anyhow::Result<IntegrandSpec> {
    let (name, rest) = spec.split_once(':').unwrap_or((spec, ""));
    let mut params = BTreeMap::new();
    for kv in rest.split(',').filter(|s| !s.is_empty()) {
        let (k, v) = kv.split_once('=').ok_or_else(|| anyhow!("expected key=value, got `{kv}`"))?;
        let v: f64 = v.trim().parse().with_context(|| format!("parameter `{k}`"))?;
        params.insert(k.trim().to_string(), v);
    }
    let take = |key: &str| params.get(key).copied().ok_or_else(|| anyhow!("builtin `{name}` needs `{key}=`"));
    let dim = |key: &str| -> anyhow::Result<usize> {
        let v = take(key)?;
        if v < 1.0 || v.fract() != 0.0 {
            bail!("`{key}` must be a positive integer, got {v}");
        }
        Ok(v as usize)
    };
    let allowed: &[&str] = match name {
        "banana" => &[],
        "mvt" | "productt" => &["nu", "d"],
        "gaussian" => &["d"],
        other => bail!("unknown builtin `{other}` (expected banana, mvt, productt, gaussian)"),
    };
    if let Some(extra) = params.keys().find(|k| !allowed.contains(&k.as_str())) {
        bail!("builtin `{name}` does not take `{extra}`");
    }
    let spec = match name {
        "banana" => Banana.spec()?,
        "mvt" => StudentT::new(take("nu")?, dim("d")?)?.spec()?,
        "productt" => ProductT::new(take("nu")?, dim("d")?)?.spec()?,
        _ => Gaussian::standard(dim("d")?).spec()?,
    };
    Ok(spec)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HessianSource {
    Matrix(Vec<Vec<f64>>),
    Keyword(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluatorSpec {
    pub exec: PathBuf,
    #[serde(default)]
    pub args: Vec<String>,
}

/// Sidecar spec file for an external integrand.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpecFile {
    pub dim: usize,
    pub mode: Vec<f64>,
    pub hessian: HessianSource,
    /// Scale of `−H⁻¹` used to size finite-difference steps.
    #[serde(default)]
    pub scale_hint: Option<f64>,
    pub evaluator: EvaluatorSpec,
}

#[derive(Serialize)]
struct Handshake<'a> {
    dim: usize,
    mode: &'a [f64],
    hessian: &'a HessianSource,
}

#[derive(Serialize)]
struct Request<'a> {
    id: u64,
    points: &'a [Vec<f64>],
}

#[derive(Deserialize)]
struct Response {
    id: u64,
    logf: Vec<Option<f64>>,
}

struct Channel {
    child: Child,
    stdin: Option<ChildStdin>,
    stdout: BufReader<ChildStdout>,
    next_id: u64,
}

/// `log f` served by a child process over newline-delimited JSON.
pub struct ExternalDensity {
    dim: usize,
    channel: Mutex<Channel>,
}

impl ExternalDensity {
    pub fn spawn(spec: &SpecFile, base: &Path) -> anyhow::Result<Self> {
        let exec = if spec.evaluator.exec.is_relative() && spec.evaluator.exec.components().count() > 1 {
            base.join(&spec.evaluator.exec)
        } else {
            spec.evaluator.exec.clone()
        };
        let mut child = Command::new(&exec)
            .args(&spec.evaluator.args)
            .current_dir(base)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .with_context(|| format!("launching evaluator {}", exec.display()))?;
        let stdin = child.stdin.take().ok_or_else(|| anyhow!("evaluator stdin unavailable"))?;
        let stdout = BufReader::new(child.stdout.take().ok_or_else(|| anyhow!("evaluator stdout unavailable"))?);
        let mut channel = Channel { child, stdin: Some(stdin), stdout, next_id: 0 };
        let hello = Handshake { dim: spec.dim, mode: &spec.mode, hessian: &spec.hessian };
        channel.send(&serde_json::to_string(&hello)?).context("sending handshake")?;
        Ok(Self { dim: spec.dim, channel: Mutex::new(channel) })
    }

    fn request(&self, points: &[Vec<f64>]) -> lapdiag::Result<Vec<f64>> {
        let mut ch = self.channel.lock().map_err(|_| Error::Evaluator("evaluator channel poisoned".into()))?;
        let id = ch.next_id;
        ch.next_id += 1;
        let line = serde_json::to_string(&Request { id, points })?;
        ch.send(&line).map_err(|e| Error::Evaluator(format!("request {id}: {e}")))?;
        let mut reply = String::new();
        let n = ch.stdout.read_line(&mut reply)?;
        if n == 0 {
            let status = ch.child.try_wait().ok().flatten();
            return Err(Error::Evaluator(format!("evaluator closed its output before answering request {id} (status {status:?})")));
        }
        let resp: Response = serde_json::from_str(reply.trim())
            .map_err(|e| Error::Evaluator(format!("malformed response to request {id}: {e}")))?;
        if resp.id != id {
            return Err(Error::Evaluator(format!("response id {} does not match request {id}", resp.id)));
        }
        if resp.logf.len() != points.len() {
            return Err(Error::Evaluator(format!(
                "request {id} sent {} points but received {} values",
                points.len(),
                resp.logf.len()
            )));
        }
        Ok(resp.logf.into_iter().map(|v| v.unwrap_or(f64::NEG_INFINITY)).collect())
    }
}

impl Channel {
    fn send(&mut self, line: &str) -> std::io::Result<()> {
        let stdin = self.stdin.as_mut().ok_or(std::io::ErrorKind::BrokenPipe)?;
        stdin.write_all(line.as_bytes())?;
        stdin.write_all(b"\n")?;
        stdin.flush()
    }
}

impl Drop for ExternalDensity {
    fn drop(&mut self) {
        if let Ok(ch) = self.channel.get_mut() {
            ch.stdin.take();
            let _ = ch.child.wait();
        }
    }
}

impl LogDensity for ExternalDensity {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&self, x: &[f64]) -> lapdiag::Result<f64> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        Ok(self.request(&[x.to_vec()])?[0])
    }

    fn log_density_batch(&self, points: &[Vec<f64>]) -> lapdiag::Result<Vec<f64>> {
        let mut out = Vec::with_capacity(points.len());
        for chunk in points.chunks(BATCH) {
            out.extend(self.request(chunk)?);
        }
        Ok(out)
    }
}

/// Loads a spec file and starts its evaluator.
pub fn external(path: &Path) -> anyhow::Result<IntegrandSpec> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let spec: SpecFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if spec.mode.len() != spec.dim {
        bail!("mode has {} entries but dim is {}", spec.mode.len(), spec.dim);
    }
    let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let density: Arc<dyn LogDensity> = Arc::new(ExternalDensity::spawn(&spec, base)?);
    let out = match &spec.hessian {
        HessianSource::Matrix(rows) => {
            if rows.len() != spec.dim || rows.iter().any(|r| r.len() != spec.dim) {
                bail!("hessian must be {0}×{0}", spec.dim);
            }
            let h = DMatrix::from_fn(spec.dim, spec.dim, |i, j| rows[i][j]);
            IntegrandSpec::new(density, spec.mode.clone(), h)?
        }
        HessianSource::Keyword(k) if k == "finite-difference" => {
            IntegrandSpec::with_fd_hessian(density, spec.mode.clone(), spec.scale_hint.unwrap_or(1.0))?
        }
        HessianSource::Keyword(k) => bail!("hessian must be a matrix or \"finite-difference\", got \"{k}\""),
    };
    Ok(out)
}

pub enum Source {
    Builtin(String),
    Spec(PathBuf),
}

impl Source {
    pub fn load(&self) -> anyhow::Result<IntegrandSpec> {
        match self {
            Source::Builtin(s) => builtin(s),
            Source::Spec(p) => external(p),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_names_parse() {
        assert_eq!(builtin("banana").unwrap().dim(), 2);
        assert_eq!(builtin("mvt:nu=38,d=2").unwrap().dim(), 2);
        assert_eq!(builtin("productt:nu=5,d=3").unwrap().dim(), 3);
        assert_eq!(builtin("gaussian:d=10").unwrap().dim(), 10);
    }

    #[test]
    fn bad_builtins_are_rejected() {
        for s in ["nope", "mvt:nu=38", "gaussian:d=2.5", "gaussian:d=2,nu=3", "mvt:nu=x,d=2", "banana:d=2"] {
            assert!(builtin(s).is_err(), "{s}");
        }
    }

    #[test]
    fn hessian_source_accepts_both_forms() {
        let a: HessianSource = serde_json::from_str("[[-1.0, 0.0], [0.0, -1.0]]").unwrap();
        assert!(matches!(a, HessianSource::Matrix(_)));
        let b: HessianSource = serde_json::from_str("\"finite-difference\"").unwrap();
        assert!(matches!(b, HessianSource::Keyword(_)));
    }
}
