//! Noise-predictor specifications for the command line.
//!
//! | spec | behaviour |
//! |---|---|
//! | `mock:zero` | all-zero prediction |
//! | `mock:const:<v>` | every entry `v` |
//! | `mock:corners:<a>,<b>,<c>,<d>` | constant per conditioning corner `(∅,∅) (∅,c) (t,∅) (t,c)` |
//! | `mock:true-eps:<file>` | the latent stored in `<file>`, on every call |
//! | `mock:oracle:<file>` | the exact noise separating the input from the clean latent in `<file>` |
//! | `pipe:<cmd>` | runs `<cmd>` through `sh -c` once per call |
//!
//! A `pipe:` command receives `VPKIT_IN`, `VPKIT_OUT`, `VPKIT_T`,
//! `VPKIT_TEXT` and `VPKIT_COND` in its environment. It must read the
//! latent at `VPKIT_IN` and write its prediction to `VPKIT_OUT`.

use std::path::{Path, PathBuf};
use std::process::Command;

use vpkit_core::guidance::mock::{CornerConstants, Fixed, Oracle};
use vpkit_core::guidance::{DiffusionSchedule, LatentTensor, NoisePredictor};

use crate::error::{AppError, AppResult};
use crate::io;

pub fn parse_predictor(spec: &str, schedule: &DiffusionSchedule, shape: &[usize]) -> AppResult<Box<dyn NoisePredictor>> {
    let bad = || AppError::validation(format!("unknown predictor spec {spec:?}"));
    let expect_shape = |t: LatentTensor, path: &str| {
        if t.shape() == shape {
            Ok(t)
        } else {
            Err(AppError::validation(format!("{path}: shape {:?} differs from the input latent {shape:?}", t.shape())))
        }
    };
    if let Some(cmd) = spec.strip_prefix("pipe:") {
        if cmd.trim().is_empty() {
            return Err(bad());
        }
        return Ok(Box::new(PipePredictor::new(cmd)?));
    }
    let rest = spec.strip_prefix("mock:").ok_or_else(bad)?;
    let (kind, arg) = rest.split_once(':').unwrap_or((rest, ""));
    let number = |s: &str| s.trim().parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(bad);
    Ok(match kind {
        "zero" if arg.is_empty() => Box::new(CornerConstants([0.0; 4])),
        "const" => Box::new(CornerConstants([number(arg)?; 4])),
        "corners" => {
            let v: Vec<f64> = arg.split(',').map(number).collect::<AppResult<_>>()?;
            Box::new(CornerConstants(v.try_into().map_err(|_| bad())?))
        }
        "true-eps" if !arg.is_empty() => Box::new(Fixed(expect_shape(io::read_latent(Path::new(arg))?, arg)?)),
        "oracle" if !arg.is_empty() => {
            let z0 = expect_shape(io::read_latent(Path::new(arg))?, arg)?;
            Box::new(Oracle { z0, schedule: schedule.clone() })
        }
        _ => return Err(bad()),
    })
}

/// Delegates each prediction to an external command.
pub struct PipePredictor {
    cmd: String,
    dir: tempfile::TempDir,
}

impl PipePredictor {
    pub fn new(cmd: &str) -> AppResult<Self> {
        Ok(Self { cmd: cmd.to_string(), dir: tempfile::tempdir()? })
    }

    fn paths(&self) -> (PathBuf, PathBuf) {
        (self.dir.path().join("in.vplt"), self.dir.path().join("out.vplt"))
    }

    fn call(&self, z: &LatentTensor, t: usize, text_on: bool, cond_on: bool) -> AppResult<LatentTensor> {
        let (input, output) = self.paths();
        std::fs::write(&input, io::encode_latent(z))?;
        let _ = std::fs::remove_file(&output);
        let out = Command::new("sh")
            .arg("-c")
            .arg(&self.cmd)
            .env("VPKIT_IN", &input)
            .env("VPKIT_OUT", &output)
            .env("VPKIT_T", t.to_string())
            .env("VPKIT_TEXT", u8::from(text_on).to_string())
            .env("VPKIT_COND", u8::from(cond_on).to_string())
            .output()?;
        if !out.status.success() {
            let stderr = String::from_utf8_lossy(&out.stderr);
            return Err(AppError::internal(format!("predictor command exited with {}: {}", out.status, stderr.trim())));
        }
        io::read_latent(&output)
    }
}

impl NoisePredictor for PipePredictor {
    fn predict(&mut self, z: &LatentTensor, t: usize, text_on: bool, cond_on: bool) -> vpkit_core::Result<LatentTensor> {
        self.call(z, t, text_on, cond_on).map_err(|e| vpkit_core::Error::Predictor(e.message))
    }
}
