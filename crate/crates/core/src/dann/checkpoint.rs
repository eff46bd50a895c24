//! Model checkpoint file.
//!
//! ```text
//! b"GRLF1"
//! u64 LE   header length in bytes
//! [u8]     UTF-8 JSON header: input shape, layer specs of the three
//!          networks, GRL config, optional normalization statistics
//! u64 LE   tensor count
//! per tensor (extractor, then class head, then domain head, in layer order,
//! weights before biases):
//!   u64 LE rank, rank x u64 LE dims, product(dims) x f64 LE data
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::grl::GrlConfig;
use super::model::DannModel;
use crate::data::NormStats;
use crate::error::{Error, Result};
use crate::nn::{LayerSpec, Network};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 5] = b"GRLF1";

#[derive(Serialize, Deserialize)]
struct Header {
    input_shape: Vec<usize>,
    feature: Vec<LayerSpec>,
    source_head: Vec<LayerSpec>,
    domain_head: Vec<LayerSpec>,
    grl: GrlConfig,
    #[serde(default)]
    normalization: Option<NormStats>,
}

/// A trained model plus the input standardization it was trained with.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: DannModel,
    pub normalization: Option<NormStats>,
}

pub fn encode(checkpoint: &Checkpoint) -> Vec<u8> {
    let m = &checkpoint.model;
    let header = Header {
        input_shape: m.input_shape().to_vec(),
        feature: m.feature.specs().to_vec(),
        source_head: m.source_head.specs().to_vec(),
        domain_head: m.domain_head.specs().to_vec(),
        grl: m.grl,
        normalization: checkpoint.normalization.clone(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let tensors: Vec<&Tensor> = [&m.feature, &m.source_head, &m.domain_head]
        .into_iter()
        .flat_map(|n| n.params.params.iter())
        .collect();

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.rank() as u64).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(format!(
                "truncated: needed {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            )),
        }
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self, what: &str) -> std::result::Result<usize, String> {
        let v = self.u64()?;
        usize::try_from(v)
            .ok()
            .filter(|&v| v <= self.bytes.len())
            .ok_or_else(|| format!("implausible {what} {v}"))
    }
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let fail = |msg: String| Error::Checkpoint {
        path: path.to_path_buf(),
        msg,
    };
    if bytes.get(..MAGIC.len()) != Some(&MAGIC[..]) {
        return Err(fail("missing GRLF1 magic string".into()));
    }
    let mut r = Reader {
        bytes,
        pos: MAGIC.len(),
    };
    let header_len = r.len("header length").map_err(fail)?;
    let header: Header =
        serde_json::from_slice(r.take(header_len).map_err(fail)?).map_err(|e| fail(format!("bad header: {e}")))?;
    let count = r.len("tensor count").map_err(fail)?;
    let mut tensors = Vec::with_capacity(count);
    for i in 0..count {
        let rank = r.len("rank").map_err(fail)?;
        let shape = (0..rank)
            .map(|_| r.len("dimension"))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(fail)?;
        let n: usize = shape.iter().product();
        let raw = r
            .take(n.checked_mul(8).ok_or_else(|| fail(format!("tensor {i} too large")))?)
            .map_err(fail)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        tensors.push(Tensor::new(&shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(fail(format!("{} trailing bytes", bytes.len() - r.pos)));
    }

    let sizes = |specs: &[LayerSpec]| {
        2 * specs
            .iter()
            .filter(|s| matches!(s, LayerSpec::Linear { .. } | LayerSpec::Conv2d { .. }))
            .count()
    };
    let (nf, ns) = (sizes(&header.feature), sizes(&header.source_head));
    if tensors.len() != nf + ns + sizes(&header.domain_head) {
        return Err(fail(format!(
            "header describes {} parameter tensors, file holds {}",
            nf + ns + sizes(&header.domain_head),
            tensors.len()
        )));
    }
    let domain_t = tensors.split_off(nf + ns);
    let source_t = tensors.split_off(nf);
    let build = |shape: &[usize], specs: Vec<LayerSpec>, t: Vec<Tensor>| {
        Network::from_params(shape, specs, t).map_err(|e| fail(e.to_string()))
    };
    let feature = build(&header.input_shape, header.feature, tensors)?;
    let width = feature.output_shape().to_vec();
    let source_head = build(&width, header.source_head, source_t)?;
    let domain_head = build(&width, header.domain_head, domain_t)?;
    let model = DannModel::from_parts(feature, source_head, domain_head, header.grl).map_err(|e| fail(e.to_string()))?;
    Ok(Checkpoint {
        model,
        normalization: header.normalization,
    })
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(checkpoint)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dann::Backbone;

    fn sample() -> Checkpoint {
        let model = DannModel::new(
            &[3, 8, 8],
            Backbone::preset("small-cnn", &[3, 8, 8]).unwrap(),
            GrlConfig::Annealed { gamma: 10.0 },
            4,
        )
        .unwrap();
        Checkpoint {
            model,
            normalization: Some(NormStats {
                mean: vec![0.1, 0.2, 1.0 / 3.0],
                std: vec![0.5, 0.25, 0.1 + 0.2],
            }),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let bytes = encode(&ck);
        assert_eq!(&bytes[..5], b"GRLF1");
        let back = decode(&bytes, Path::new("x")).unwrap();
        assert_eq!(back, ck);
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn truncation_and_bad_magic() {
        let bytes = encode(&sample());
        for cut in [3, 20, bytes.len() - 1] {
            assert!(matches!(
                decode(&bytes[..cut], Path::new("x")),
                Err(Error::Checkpoint { .. })
            ));
        }
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        let err = decode(&wrong, Path::new("x")).unwrap_err().to_string();
        assert!(err.contains("GRLF1"), "{err}");
    }
}
