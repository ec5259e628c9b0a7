use super::decoder::{DecoderConfig, DecoderState};
use super::tensor::Tensor;
use super::ModelError;
use crate::data::BackboneScale;
use crate::float::Float;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"SBCK";
const VERSION: u32 = 1;

/// Everything needed to rebuild a trained model: the decoder tensors plus
/// the recipe for regenerating the frozen encoder (scale, seed, input size).
pub struct Checkpoint {
    pub scale: BackboneScale,
    pub encoder_seed: u64,
    pub resolution: (usize, usize),
    pub decoder: Vec<(String, Tensor<f64>)>,
}

impl Checkpoint {
    pub fn decoder_state(&self) -> Result<DecoderState<f64>, ModelError> {
        DecoderState::from_params(DecoderConfig::for_scale(self.scale), self.decoder.clone())
    }
}

fn scale_tag(scale: BackboneScale) -> u8 {
    match scale {
        BackboneScale::Toy => 0,
        BackboneScale::Small => 1,
        BackboneScale::Base => 2,
        BackboneScale::Large => 3,
    }
}

fn scale_from_tag(tag: u8) -> Result<BackboneScale, ModelError> {
    Ok(match tag {
        0 => BackboneScale::Toy,
        1 => BackboneScale::Small,
        2 => BackboneScale::Base,
        3 => BackboneScale::Large,
        other => return Err(ModelError::Checkpoint(format!("unknown scale tag {other}"))),
    })
}

/// Binary layout, all little endian: magic, format version, scale tag,
/// encoder seed, input height and width, then each named tensor as
/// name length/bytes, rank, dims, and f64 payload.
pub fn save_checkpoint<T: Float>(
    path: &Path,
    scale: BackboneScale,
    encoder_seed: u64,
    resolution: (usize, usize),
    decoder: &DecoderState<T>,
) -> Result<(), ModelError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[scale_tag(scale)])?;
    w.write_all(&encoder_seed.to_le_bytes())?;
    w.write_all(&(resolution.0 as u32).to_le_bytes())?;
    w.write_all(&(resolution.1 as u32).to_le_bytes())?;
    w.write_all(&(decoder.params().len() as u32).to_le_bytes())?;
    for (name, tensor) in decoder.params() {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u16).to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&[tensor.shape().len() as u8])?;
        for &d in tensor.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in tensor.data() {
            w.write_all(&v.to_f64_lossy().to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_exact<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N], ModelError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|_| ModelError::Checkpoint("file ends mid-record".into()))?;
    Ok(buf)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    let mut r = BufReader::new(File::open(path)?);
    if &read_exact::<_, 4>(&mut r)? != MAGIC {
        return Err(ModelError::Checkpoint("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(read_exact(&mut r)?);
    if version != VERSION {
        return Err(ModelError::Checkpoint(format!(
            "format version {version} is not the supported {VERSION}"
        )));
    }
    let scale = scale_from_tag(read_exact::<_, 1>(&mut r)?[0])?;
    let encoder_seed = u64::from_le_bytes(read_exact(&mut r)?);
    let res_h = u32::from_le_bytes(read_exact(&mut r)?) as usize;
    let res_w = u32::from_le_bytes(read_exact(&mut r)?) as usize;
    let count = u32::from_le_bytes(read_exact(&mut r)?) as usize;
    if count > 4096 {
        return Err(ModelError::Checkpoint(format!("implausible tensor count {count}")));
    }

    let mut decoder = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u16::from_le_bytes(read_exact(&mut r)?) as usize;
        let mut name_buf = vec![0u8; name_len];
        r.read_exact(&mut name_buf)
            .map_err(|_| ModelError::Checkpoint("file ends mid-record".into()))?;
        let name = String::from_utf8(name_buf)
            .map_err(|_| ModelError::Checkpoint("tensor name is not valid text".into()))?;
        let rank = read_exact::<_, 1>(&mut r)?[0] as usize;
        if rank > 8 {
            return Err(ModelError::Checkpoint(format!("implausible tensor rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut numel: usize = 1;
        for _ in 0..rank {
            let d = u32::from_le_bytes(read_exact(&mut r)?) as usize;
            numel = numel
                .checked_mul(d)
                .filter(|&n| n <= 1 << 30)
                .ok_or_else(|| ModelError::Checkpoint("tensor size overflows".into()))?;
            shape.push(d);
        }
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(f64::from_le_bytes(read_exact(&mut r)?));
        }
        decoder.push((name, Tensor::from_vec(&shape, data)));
    }
    let mut trailer = [0u8; 1];
    if r.read(&mut trailer)? != 0 {
        return Err(ModelError::Checkpoint("trailing bytes after the last tensor".into()));
    }
    Ok(Checkpoint { scale, encoder_seed, resolution: (res_h, res_w), decoder })
}
