use opforge::derived::{build_l1, min_quantization, one_sum, quotient_space, scaled_space};
use opforge::json::rows_to_mat;
use opforge::linalg::{c, CMat};
use opforge::metric::BasedSpace;
use opforge::{ConcreteSpace, EvalCtx, OpError, Result, Space, SpaceElement};
use serde_json::Value;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

fn invalid(e: impl std::fmt::Display) -> OpError {
    OpError::Invalid(e.to_string())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Reads input files and remembers their digests.
#[derive(Default)]
pub struct Inputs {
    pub digests: Vec<(PathBuf, String)>,
}

impl Inputs {
    pub fn read(&mut self, path: &Path) -> Result<Value> {
        let bytes = std::fs::read(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        self.digests.push((path.to_path_buf(), sha256_hex(&bytes)));
        serde_json::from_slice(&bytes).map_err(|e| invalid(format!("{}: {e}", path.display())))
    }

    pub fn space(&mut self, path: &Path, ncap: usize) -> Result<Space> {
        space_from_value(&self.read(path)?, ncap)
    }

    pub fn concrete(&mut self, path: &Path) -> Result<ConcreteSpace> {
        match self.space(path, 1)? {
            Space::Concrete(s) => Ok(s),
            other => Err(invalid(format!("{} holds a {} space, a concrete one is needed", path.display(), other.kind()))),
        }
    }

    pub fn element(&mut self, path: &Path) -> Result<SpaceElement> {
        element_from_value(&self.read(path)?)
    }

    pub fn elements(&mut self, path: &Path) -> Result<Vec<SpaceElement>> {
        match self.read(path)? {
            Value::Array(items) => items.iter().map(element_from_value).collect(),
            _ => Err(invalid("expected a list of elements")),
        }
    }

    /// A matrix file, or the `coefficients` field of a map file.
    pub fn matrix(&mut self, path: &Path) -> Result<CMat> {
        let v = self.read(path)?;
        matrix_from_value(v.get("coefficients").unwrap_or(&v))
    }

    pub fn based(&mut self, space: &Path, tuple: Option<&Path>, ctx: &EvalCtx) -> Result<BasedSpace> {
        let s = self.concrete(space)?;
        match tuple {
            Some(t) => {
                let t = self.matrix(t)?;
                BasedSpace::new(s, t, ctx)
            }
            None => BasedSpace::canonical(s, ctx),
        }
    }
}

pub fn matrix_from_value(v: &Value) -> Result<CMat> {
    let rows: Vec<Vec<[f64; 2]>> = serde_json::from_value(v.clone()).map_err(invalid)?;
    rows_to_mat(&rows).map_err(invalid)
}

/// Either a serialized element or a bare list of `[re, im]` coordinates at level 1.
pub fn element_from_value(v: &Value) -> Result<SpaceElement> {
    if let Value::Array(_) = v {
        let coords: Vec<[f64; 2]> = serde_json::from_value(v.clone()).map_err(invalid)?;
        let coords: Vec<_> = coords.iter().map(|p| c(p[0], p[1])).collect();
        return Ok(SpaceElement::scalar(&coords));
    }
    let level = v.get("level").and_then(Value::as_u64).ok_or_else(|| invalid("element needs a level"))? as usize;
    let coeffs = v
        .get("coeffs")
        .and_then(Value::as_array)
        .ok_or_else(|| invalid("element needs coeffs"))?
        .iter()
        .map(matrix_from_value)
        .collect::<Result<Vec<_>>>()?;
    SpaceElement::new(level, coeffs)
}

fn field<'a>(v: &'a Value, name: &str) -> Result<&'a Value> {
    v.get(name).ok_or_else(|| invalid(format!("missing field {name}")))
}

fn usize_field(v: &Value, name: &str, default: Option<usize>) -> Result<usize> {
    match (v.get(name).and_then(Value::as_u64), default) {
        (Some(x), _) => Ok(x as usize),
        (None, Some(d)) => Ok(d),
        (None, None) => Err(invalid(format!("missing field {name}"))),
    }
}

pub fn space_from_value(v: &Value, ncap: usize) -> Result<Space> {
    let kind = v.get("kind").and_then(Value::as_str).unwrap_or("concrete");
    match kind {
        "concrete" => Ok(Space::Concrete(ConcreteSpace::from_json(&v.to_string())?)),
        "quotient" => {
            let parent = space_from_value(field(v, "parent")?, ncap)?;
            let kernel = field(v, "kernel")?
                .as_array()
                .ok_or_else(|| invalid("kernel must be a list"))?
                .iter()
                .map(element_from_value)
                .collect::<Result<Vec<_>>>()?;
            quotient_space(parent, kernel)
        }
        "min_quant" => Ok(min_quantization(space_from_value(field(v, "parent")?, ncap)?, usize_field(v, "n", None)?)),
        "one_sum" => {
            let summands = field(v, "summands")?
                .as_array()
                .ok_or_else(|| invalid("summands must be a list"))?
                .iter()
                .map(|s| space_from_value(s, ncap))
                .collect::<Result<Vec<_>>>()?;
            Ok(one_sum(summands, usize_field(v, "ncap", Some(ncap))?))
        }
        "l1" => Ok(build_l1(usize_field(v, "k", None)?, usize_field(v, "ncap", Some(ncap))?)),
        "scaled" => {
            let delta = field(v, "delta")?.as_f64().ok_or_else(|| invalid("delta must be a number"))?;
            scaled_space(space_from_value(field(v, "parent")?, ncap)?, delta)
        }
        other => Err(invalid(format!("unknown space kind {other}"))),
    }
}
