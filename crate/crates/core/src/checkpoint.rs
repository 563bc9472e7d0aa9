//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!   magic "OLCK" | version u32 | echo_len u64 | echo bytes (UTF-8
//!   key=value lines) | tensor_count u64 | per tensor: name_len u64,
//!   name bytes, ndim u64, dims u64..., data f64...
//!
//! Floats are stored as little-endian f64 bits, so save -> load is
//! bit-exact. The same container carries full model checkpoints, basis
//! files, and correlation estimates.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{OLinearConfig, OLinearParams, ParamSet, Variant};
use crate::scalar::Scalar;
use crate::transform::{BasisMethod, OrthoBasis};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: [u8; 4] = *b"OLCK";
pub const VERSION: u32 = 1;

/// A named-tensor container plus a flat key=value configuration echo.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub echo: BTreeMap<String, String>,
    pub tensors: Vec<NamedTensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Checkpoint {
    pub fn new(echo: BTreeMap<String, String>) -> Self {
        Self {
            echo,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) {
        self.tensors.push(NamedTensor {
            name: name.into(),
            shape,
            data,
        });
    }

    pub fn find(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    fn echo_block(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.echo {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    fn parse_echo(block: &str) -> BTreeMap<String, String> {
        let mut map = BTreeMap::new();
        for line in block.lines() {
            if let Some((k, v)) = line.split_once('=') {
                map.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        map
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let echo = self.echo_block();
        out.extend_from_slice(&(echo.len() as u64).to_le_bytes());
        out.extend_from_slice(echo.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u64).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u64).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u64).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            debug_assert_eq!(t.shape.iter().product::<usize>(), t.data.len());
            for &v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = Reader { buf: bytes, pos: 0 };
        let magic = cursor.take(4)?;
        if magic != MAGIC {
            return Err(Error::Checkpoint(format!(
                "bad magic {:02x?}, expected {:02x?}",
                magic, MAGIC
            )));
        }
        let version = u32::from_le_bytes(cursor.take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {version}, expected {VERSION}"
            )));
        }
        let echo_len = cursor.take_u64()? as usize;
        let echo_bytes = cursor.take(echo_len)?;
        let echo = Self::parse_echo(
            std::str::from_utf8(echo_bytes)
                .map_err(|_| Error::Checkpoint("config echo is not UTF-8".into()))?,
        );
        let count = cursor.take_u64()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = cursor.take_u64()? as usize;
            let name = std::str::from_utf8(cursor.take(name_len)?)
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
                .to_string();
            let ndim = cursor.take_u64()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(cursor.take_u64()? as usize);
            }
            let len: usize = shape.iter().product();
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                let raw: [u8; 8] = cursor.take(8)?.try_into().unwrap();
                data.push(f64::from_le_bytes(raw));
            }
            tensors.push(NamedTensor { name, shape, data });
        }
        Ok(Self { echo, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        file.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint(format!(
                "truncated file: wanted {n} bytes at offset {}, have {}",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn take_u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn basis_tensors<T: Scalar>(ck: &mut Checkpoint, prefix: &str, basis: &OrthoBasis<T>) {
    ck.push(
        prefix.to_string(),
        vec![basis.n, basis.n],
        basis.q.data().iter().map(|v| v.to_f64_c()).collect(),
    );
    if let Some(ev) = &basis.eigenvalues {
        ck.push(
            format!("{prefix}_eigenvalues"),
            vec![ev.len()],
            ev.iter().map(|v| v.to_f64_c()).collect(),
        );
    }
    ck.echo
        .insert(format!("{prefix}_method"), basis.method.name().to_string());
}

/// Serialize a full model: every learnable tensor plus the frozen buffers,
/// with basis method tags in the config echo.
pub fn save_checkpoint<T: Scalar>(
    params: &OLinearParams<T>,
    echo: &BTreeMap<String, String>,
    path: &Path,
) -> Result<()> {
    let mut ck = Checkpoint::new(echo.clone());
    for view in params.set.tensors() {
        ck.push(
            view.name,
            view.shape,
            view.data.iter().map(|v| v.to_f64_c()).collect(),
        );
    }
    basis_tensors(&mut ck, "q_in", &params.q_in);
    basis_tensors(&mut ck, "q_out", &params.q_out);
    if let Some(mix) = &params.corr_mix {
        ck.push(
            "corr_mix",
            vec![mix.rows(), mix.cols()],
            mix.data().iter().map(|v| v.to_f64_c()).collect(),
        );
    }
    ck.save(path)
}

fn restore_basis<T: Scalar>(ck: &Checkpoint, prefix: &str, n: usize) -> Result<OrthoBasis<T>> {
    let tensor = ck
        .find(prefix)
        .ok_or_else(|| Error::Checkpoint(format!("missing tensor '{prefix}'")))?;
    if tensor.shape != [n, n] {
        return Err(Error::Checkpoint(format!(
            "tensor '{prefix}' has shape {:?}, expected [{n}, {n}]",
            tensor.shape
        )));
    }
    let method: BasisMethod = ck
        .echo
        .get(&format!("{prefix}_method"))
        .ok_or_else(|| Error::Checkpoint(format!("missing echo key '{prefix}_method'")))?
        .parse()?;
    let q = Matrix::from_vec(n, n, tensor.data.iter().map(|&v| T::c(v)).collect())?;
    let eigenvalues = ck
        .find(&format!("{prefix}_eigenvalues"))
        .map(|t| t.data.iter().map(|&v| T::c(v)).collect());
    Ok(OrthoBasis {
        q,
        eigenvalues,
        method,
        n,
    })
}

/// Rebuild model parameters from a checkpoint, validating every tensor
/// shape against the configuration.
pub fn restore_params<T: Scalar>(
    ck: &Checkpoint,
    config: &OLinearConfig,
) -> Result<OLinearParams<T>> {
    let mut set = ParamSet::<T>::zeros(config);
    for view in set.tensors_mut() {
        let tensor = ck
            .find(&view.name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor '{}'", view.name)))?;
        if tensor.shape != view.shape {
            return Err(Error::Checkpoint(format!(
                "tensor '{}' has shape {:?}, expected {:?}",
                view.name, tensor.shape, view.shape
            )));
        }
        for (dst, &src) in view.data.iter_mut().zip(&tensor.data) {
            *dst = T::c(src);
        }
    }
    let q_in = restore_basis(ck, "q_in", config.lookback)?;
    let q_out = restore_basis(ck, "q_out", config.horizon)?;
    let corr_mix = match config.variant {
        Variant::OLinearC => {
            let n = config.n_variates;
            let tensor = ck
                .find("corr_mix")
                .ok_or_else(|| Error::Checkpoint("missing tensor 'corr_mix'".into()))?;
            if tensor.shape != [n, n] {
                return Err(Error::Checkpoint(format!(
                    "tensor 'corr_mix' has shape {:?}, expected [{n}, {n}]",
                    tensor.shape
                )));
            }
            Some(Matrix::from_vec(
                n,
                n,
                tensor.data.iter().map(|&v| T::c(v)).collect(),
            )?)
        }
        Variant::OLinear => None,
    };
    Ok(OLinearParams {
        set,
        q_in,
        q_out,
        corr_mix,
        version: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::OLinearConfig;
    use crate::transform::build_basis;

    fn roundtrip_fixture() -> (OLinearConfig, OLinearParams<f64>) {
        let config = OLinearConfig {
            embed_size: 2,
            model_dim: 5,
            n_blocks: 2,
            basis_method: BasisMethod::Fourier,
            ..OLinearConfig::new(3, 6, 4)
        };
        let q_in = build_basis::<f64>(None, BasisMethod::Fourier, 6).unwrap();
        let q_out = build_basis::<f64>(None, BasisMethod::Fourier, 4).unwrap();
        let params = OLinearParams::new(&config, q_in, q_out, None, 21).unwrap();
        (config, params)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (config, params) = roundtrip_fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.olck");
        let mut echo = BTreeMap::new();
        echo.insert("n_variates".to_string(), "3".to_string());
        echo.insert("note".to_string(), "fixture".to_string());
        save_checkpoint(&params, &echo, &path).unwrap();

        let ck = Checkpoint::load(&path).unwrap();
        assert_eq!(ck.echo.get("note").unwrap(), "fixture");
        let restored: OLinearParams<f64> = restore_params(&ck, &config).unwrap();
        for (a, b) in params
            .set
            .tensors()
            .iter()
            .zip(restored.set.tensors().iter())
        {
            assert_eq!(a.data, b.data, "{}", a.name);
        }
        assert_eq!(params.q_in.q.data(), restored.q_in.q.data());
        assert_eq!(params.q_out.method, restored.q_out.method);

        // Saving the restored parameters reproduces the file byte for byte.
        let path2 = dir.path().join("model2.olck");
        save_checkpoint(&restored, &echo, &path2).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn truncated_file_is_rejected() {
        let (_, params) = roundtrip_fixture();
        let mut echo = BTreeMap::new();
        echo.insert("k".into(), "v".into());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.olck");
        save_checkpoint(&params, &echo, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let err = Checkpoint::from_bytes(&bytes[..bytes.len() - 9]).unwrap_err();
        assert!(err.to_string().contains("truncated"));
    }

    #[test]
    fn foreign_magic_is_rejected() {
        let err = Checkpoint::from_bytes(b"NOPE\x01\x00\x00\x00").unwrap_err();
        assert!(err.to_string().contains("bad magic"));
    }

    #[test]
    fn shape_mismatch_names_the_tensor() {
        let (config, params) = roundtrip_fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.olck");
        save_checkpoint(&params, &BTreeMap::new(), &path).unwrap();
        let ck = Checkpoint::load(&path).unwrap();
        // Ask for a differently shaped model.
        let wrong = OLinearConfig {
            model_dim: 7,
            ..config
        };
        let err = restore_params::<f64>(&ck, &wrong).unwrap_err();
        assert!(err.to_string().contains("enc_w"), "{err}");
    }
}
