//! Text checkpoints: a key=value header followed by named tensor blocks.
//!
//! Floats use shortest round-trip decimal, so save/load is bit-exact.

use crate::encoders::{FrozenSourceEncoder, ModelDims, ModelState, RecipeEncoderParams};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub stage: String,
    pub seed: u64,
    pub variant: String,
    pub pool_size: usize,
}

fn zeros_like_dense(rows: usize, cols: usize) -> crate::encoders::Dense {
    crate::encoders::Dense {
        w: Matrix::zeros(rows, cols),
        b: Matrix::zeros(1, cols),
    }
}

fn zero_state(dims: ModelDims) -> (ModelState, RecipeEncoderParams) {
    let recipe = RecipeEncoderParams {
        title: zeros_like_dense(dims.d_title, dims.hidden),
        ingredient: zeros_like_dense(dims.d_ingredient, dims.hidden),
        steps: zeros_like_dense(dims.d_steps, dims.hidden),
        fusion: zeros_like_dense(3 * dims.hidden, dims.embed),
    };
    let state = ModelState {
        dims,
        recipe_encoder: recipe.clone(),
        image_encoder: crate::encoders::ImageEncoderParams {
            l1: zeros_like_dense(dims.d_image, dims.hidden),
            l2: zeros_like_dense(dims.hidden, dims.embed),
        },
        discriminator: crate::encoders::DiscriminatorParams {
            l1: zeros_like_dense(dims.embed, dims.disc_hidden),
            l2: zeros_like_dense(dims.disc_hidden, dims.disc_hidden),
            l3: zeros_like_dense(dims.disc_hidden, 1),
        },
        heads: crate::encoders::HeadsParams {
            ingredient: zeros_like_dense(dims.embed, dims.vocab),
            reconstruct: zeros_like_dense(dims.embed, dims.d_image),
        },
    };
    (state, recipe)
}

fn write_tensor(out: &mut String, name: &str, m: &Matrix) {
    out.push_str(&format!("tensor {name} {} {}\n", m.rows(), m.cols()));
    for r in 0..m.rows() {
        let row: Vec<String> = m.row(r).iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
}

pub fn save(
    path: &Path,
    state: &ModelState,
    frozen: &FrozenSourceEncoder,
    meta: &CheckpointMeta,
) -> Result<()> {
    let d = state.dims;
    let mut out = String::new();
    out.push_str("# model checkpoint\n");
    out.push_str("version=1\n");
    out.push_str(&format!("stage={}\n", meta.stage));
    out.push_str(&format!("seed={}\n", meta.seed));
    out.push_str(&format!("variant={}\n", meta.variant));
    out.push_str(&format!("pool_size={}\n", meta.pool_size));
    out.push_str(&format!("d_title={}\n", d.d_title));
    out.push_str(&format!("d_ingredient={}\n", d.d_ingredient));
    out.push_str(&format!("d_steps={}\n", d.d_steps));
    out.push_str(&format!("d_image={}\n", d.d_image));
    out.push_str(&format!("vocab={}\n", d.vocab));
    out.push_str(&format!("hidden={}\n", d.hidden));
    out.push_str(&format!("embed={}\n", d.embed));
    out.push_str(&format!("disc_hidden={}\n", d.disc_hidden));

    for (name, m) in state.all_tensors() {
        write_tensor(&mut out, &name, m);
    }
    for (name, m) in frozen.params().named_tensors("frozen") {
        write_tensor(&mut out, &name, m);
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load(path: &Path) -> Result<(ModelState, FrozenSourceEncoder, CheckpointMeta)> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingInput(path.display().to_string())
        } else {
            Error::io(path.display().to_string(), e)
        }
    })?;
    let origin = path.display().to_string();
    let mut lines = text.lines().enumerate().peekable();

    let mut header: Vec<(String, String)> = Vec::new();
    while let Some((_, line)) = lines.peek() {
        let trimmed = line.trim();
        if trimmed.starts_with("tensor ") {
            break;
        }
        let (lineno, line) = lines.next().expect("peeked");
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let Some((k, v)) = trimmed.split_once('=') else {
            return Err(Error::Parse {
                path: origin.clone(),
                line: lineno + 1,
                msg: format!("expected key=value in header, got {trimmed:?}"),
            });
        };
        header.push((k.trim().to_string(), v.trim().to_string()));
    }
    let reader = crate::kv::KvReader::new(&header, origin.clone());
    let version: u32 = reader.parse("version")?;
    if version != 1 {
        return Err(Error::Config(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let meta = CheckpointMeta {
        stage: reader.require("stage")?.to_string(),
        seed: reader.parse("seed")?,
        variant: reader.require("variant")?.to_string(),
        pool_size: reader.parse("pool_size")?,
    };
    let dims = ModelDims {
        d_title: reader.parse("d_title")?,
        d_ingredient: reader.parse("d_ingredient")?,
        d_steps: reader.parse("d_steps")?,
        d_image: reader.parse("d_image")?,
        vocab: reader.parse("vocab")?,
        hidden: reader.parse("hidden")?,
        embed: reader.parse("embed")?,
        disc_hidden: reader.parse("disc_hidden")?,
    };

    let (mut state, mut frozen_params) = zero_state(dims);
    let mut filled: std::collections::BTreeSet<String> = Default::default();

    while let Some((lineno, line)) = lines.next() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let parts: Vec<&str> = trimmed.split_whitespace().collect();
        if parts.len() != 4 || parts[0] != "tensor" {
            return Err(Error::Parse {
                path: origin.clone(),
                line: lineno + 1,
                msg: format!("expected 'tensor <name> <rows> <cols>', got {trimmed:?}"),
            });
        }
        let name = parts[1].to_string();
        let rows: usize = parts[2].parse().map_err(|_| Error::Parse {
            path: origin.clone(),
            line: lineno + 1,
            msg: "bad row count".into(),
        })?;
        let cols: usize = parts[3].parse().map_err(|_| Error::Parse {
            path: origin.clone(),
            line: lineno + 1,
            msg: "bad column count".into(),
        })?;
        let mut m = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let Some((rno, row_line)) = lines.next() else {
                return Err(Error::Parse {
                    path: origin.clone(),
                    line: lineno + 1,
                    msg: format!("tensor {name} truncated"),
                });
            };
            let vals: Vec<&str> = row_line.split_whitespace().collect();
            if vals.len() != cols {
                return Err(Error::Parse {
                    path: origin.clone(),
                    line: rno + 1,
                    msg: format!("tensor {name}: expected {cols} values, got {}", vals.len()),
                });
            }
            for (c, v) in vals.iter().enumerate() {
                let parsed: f64 = v.parse().map_err(|_| Error::Parse {
                    path: origin.clone(),
                    line: rno + 1,
                    msg: format!("tensor {name}: bad float {v:?}"),
                })?;
                if !parsed.is_finite() {
                    return Err(Error::Parse {
                        path: origin.clone(),
                        line: rno + 1,
                        msg: format!("tensor {name}: non-finite value"),
                    });
                }
                m.set(r, c, parsed);
            }
        }

        let mut assigned = false;
        {
            let mut targets = state.all_tensors_mut();
            targets.extend(frozen_params.named_tensors_mut("frozen"));
            for (tname, tensor) in targets {
                if tname == name {
                    if tensor.shape() != m.shape() {
                        return Err(Error::Config(format!(
                            "tensor {name}: shape {:?} does not match expected {:?}",
                            m.shape(),
                            tensor.shape()
                        )));
                    }
                    *tensor = m;
                    assigned = true;
                    break;
                }
            }
        }
        if !assigned {
            return Err(Error::Config(format!(
                "unexpected tensor {name} in checkpoint"
            )));
        }
        filled.insert(name);
    }

    let expected: Vec<String> = state
        .all_tensors()
        .iter()
        .map(|(n, _)| n.clone())
        .chain(
            frozen_params
                .named_tensors("frozen")
                .iter()
                .map(|(n, _)| n.clone()),
        )
        .collect();
    for name in expected {
        if !filled.contains(&name) {
            return Err(Error::Config(format!("checkpoint missing tensor {name}")));
        }
    }

    Ok((state, FrozenSourceEncoder::snapshot(&frozen_params), meta))
}
