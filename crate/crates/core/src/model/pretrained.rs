//! Import of third-party backbone weights from a safetensors file.
//!
//! The name-map file has one `theirName -> ourName` pair per line; blank
//! lines and lines starting with `#` are ignored. Our names are
//! `conv{i}.weight` (`[out, in, k, k]`) and `conv{i}.bias` (`[out]`).
//! F32 and F64 tensors are accepted.

use std::path::Path;

use safetensors::{Dtype, SafeTensors};

use super::state::ModelState;
use crate::error::{Error, Result};

pub fn parse_name_map(text: &str) -> Result<Vec<(String, String)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| {
            let (theirs, ours) = l.split_once("->").ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "name map line {}: expected `theirs -> ours`",
                    i + 1
                ))
            })?;
            Ok((theirs.trim().to_string(), ours.trim().to_string()))
        })
        .collect()
}

/// Copies mapped tensors into `state`. Returns the names that were loaded.
pub fn load_pretrained_backbone(
    state: &mut ModelState,
    weights: &Path,
    name_map: &[(String, String)],
) -> Result<Vec<String>> {
    let bytes = std::fs::read(weights).map_err(|e| Error::io(weights, e))?;
    let st = SafeTensors::deserialize(&bytes)
        .map_err(|e| Error::InvalidArgument(format!("{}: {e}", weights.display())))?;
    let names = state.param_names();
    let mut loaded = Vec::new();
    for (theirs, ours) in name_map {
        let idx = names.iter().position(|n| n == ours).ok_or_else(|| {
            Error::InvalidArgument(format!("unknown parameter `{ours}` in name map"))
        })?;
        let view = st
            .tensor(theirs)
            .map_err(|e| Error::InvalidArgument(format!("tensor `{theirs}`: {e}")))?;
        let target = &mut state.params_mut()[idx];
        if view.shape() != target.shape() {
            return Err(Error::ShapeMismatch {
                expected: format!("{ours} {:?}", target.shape()),
                actual: format!("{theirs} {:?}", view.shape()),
            });
        }
        let values: Vec<f64> = match view.dtype() {
            Dtype::F32 => view
                .data()
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
                .collect(),
            Dtype::F64 => view
                .data()
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect(),
            other => {
                return Err(Error::InvalidArgument(format!(
                    "tensor `{theirs}` has unsupported dtype {other:?}"
                )));
            }
        };
        target.data_mut().copy_from_slice(&values);
        loaded.push(ours.clone());
    }
    Ok(loaded)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_toy_descriptor;
    use safetensors::tensor::TensorView;

    #[test]
    fn name_map_parsing() {
        let m =
            parse_name_map("# comment\nconv1_1.w -> conv0.weight\n\n  conv1_1.b->conv0.bias \n")
                .unwrap();
        assert_eq!(
            m,
            vec![
                ("conv1_1.w".into(), "conv0.weight".into()),
                ("conv1_1.b".into(), "conv0.bias".into())
            ]
        );
        assert!(parse_name_map("no arrow").is_err());
    }

    #[test]
    fn imports_mapped_f32_tensor() {
        let d = build_toy_descriptor(&[2, 3], 8).unwrap();
        let mut state = ModelState::zeros(d).unwrap();
        let values: Vec<f32> = (0..2 * 3 * 9).map(|i| i as f32 * 0.5).collect();
        let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        let view = TensorView::new(Dtype::F32, vec![2, 3, 3, 3], &bytes).unwrap();
        let blob = safetensors::serialize([("features.0.weight", view)], None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.safetensors");
        std::fs::write(&path, blob).unwrap();

        let map = parse_name_map("features.0.weight -> conv0.weight").unwrap();
        let loaded = load_pretrained_backbone(&mut state, &path, &map).unwrap();
        assert_eq!(loaded, vec!["conv0.weight".to_string()]);
        assert_eq!(state.conv_weight(0).data()[3], 1.5);

        let bad = parse_name_map("features.0.weight -> conv1.weight").unwrap();
        assert!(load_pretrained_backbone(&mut state, &path, &bad).is_err());
    }
}
