//! Versioned textual model dump: a spec header followed by named parameter
//! blocks in declaration order. Values print in shortest round-trip decimal,
//! so save → load reproduces every parameter bit-exactly.

use std::path::Path;

use super::{DetectorSpec, FittedDetector};
use crate::dataio::NormStats;
use crate::numkit::{ParamStore, Tensor};
use crate::scoring::GaussianModel;
use crate::{Error, Result};

const MAGIC: &str = "tsadbench-model v1";

pub fn save_model(model: &FittedDetector, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    out.push_str("spec ");
    out.push_str(
        &serde_json::to_string(&model.spec)
            .map_err(|e| Error::contract(format!("spec serialization: {e}")))?,
    );
    out.push('\n');
    out.push_str("norm ");
    out.push_str(
        &serde_json::to_string(&model.norm)
            .map_err(|e| Error::contract(format!("norm serialization: {e}")))?,
    );
    out.push('\n');
    out.push_str("calibration ");
    match &model.calibration {
        Some(g) => out.push_str(
            &serde_json::to_string(g)
                .map_err(|e| Error::contract(format!("calibration serialization: {e}")))?,
        ),
        None => out.push_str("none"),
    }
    out.push('\n');
    for (name, tensor) in model.params.iter() {
        out.push_str("param ");
        out.push_str(name);
        out.push(' ');
        let dims: Vec<String> = tensor.shape().iter().map(|d| d.to_string()).collect();
        out.push_str(&dims.join("x"));
        for v in tensor.data() {
            out.push(' ');
            out.push_str(&format!("{v}"));
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<FittedDetector> {
    let content = std::fs::read_to_string(path)?;
    let mut lines = content.lines().enumerate();

    let (_, first) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "empty model file".into(),
    })?;
    if first.trim() != MAGIC {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected `{MAGIC}` header, got `{first}`"),
        });
    }

    let mut expect = |tag: &str| -> Result<(usize, String)> {
        let (idx, line) = lines.next().ok_or(Error::Parse {
            line: 0,
            msg: format!("missing `{tag}` line"),
        })?;
        let rest = line.strip_prefix(tag).and_then(|r| r.strip_prefix(' '));
        match rest {
            Some(r) => Ok((idx + 1, r.to_string())),
            None => Err(Error::Parse {
                line: idx + 1,
                msg: format!("expected `{tag} ...`"),
            }),
        }
    };

    let (line_no, spec_json) = expect("spec")?;
    let spec: DetectorSpec = serde_json::from_str(&spec_json).map_err(|e| Error::Parse {
        line: line_no,
        msg: format!("bad spec: {e}"),
    })?;
    let (line_no, norm_json) = expect("norm")?;
    let norm: NormStats = serde_json::from_str(&norm_json).map_err(|e| Error::Parse {
        line: line_no,
        msg: format!("bad norm stats: {e}"),
    })?;
    let (line_no, cal_json) = expect("calibration")?;
    let calibration: Option<GaussianModel> = if cal_json == "none" {
        None
    } else {
        Some(serde_json::from_str(&cal_json).map_err(|e| Error::Parse {
            line: line_no,
            msg: format!("bad calibration: {e}"),
        })?)
    };

    let mut params = ParamStore::new(spec.seed);
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(' ');
        match parts.next() {
            Some("param") => {}
            other => {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("expected `param`, got `{}`", other.unwrap_or("")),
                })
            }
        }
        let name = parts.next().ok_or(Error::Parse {
            line: line_no,
            msg: "missing parameter name".into(),
        })?;
        let shape_str = parts.next().ok_or(Error::Parse {
            line: line_no,
            msg: "missing parameter shape".into(),
        })?;
        let shape: Vec<usize> = shape_str
            .split('x')
            .map(|d| {
                d.parse().map_err(|e| Error::Parse {
                    line: line_no,
                    msg: format!("bad shape `{shape_str}`: {e}"),
                })
            })
            .collect::<Result<_>>()?;
        let data: Vec<f64> = parts
            .map(|v| {
                v.parse().map_err(|e| Error::Parse {
                    line: line_no,
                    msg: format!("bad value `{v}`: {e}"),
                })
            })
            .collect::<Result<_>>()?;
        let tensor = Tensor::new(shape, data).map_err(|e| Error::Parse {
            line: line_no,
            msg: format!("inconsistent parameter block: {e}"),
        })?;
        params
            .insert_tensor(name, tensor)
            .map_err(|e| Error::Parse {
                line: line_no,
                msg: e.to_string(),
            })?;
    }

    Ok(FittedDetector {
        spec,
        params,
        calibration,
        norm,
        epoch_losses: Vec::new(),
    })
}
