//! Persistence: PFM images, sinogram sidecars, filter-bank and checkpoint
//! containers, dataset manifests, and content hashes.
//!
//! Binary containers carry 64-bit little-endian payloads and round-trip
//! bit-exactly. PFM files follow the portable-float-map standard (32-bit
//! little-endian samples, bottom-up scanlines, scale header -1.0). JSON
//! documents are written with sorted keys so their hashes are stable.

use std::collections::BTreeMap;
use std::fs;

use std::path::Path;

use ndarray::Array2;
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{LactError, Result};
use crate::image::Image;
use crate::opbank::{FilterBank, FilterKey};
use crate::tomo::{Geometry, Sinogram};
use crate::wavelet::{Family, SubbandId, SubbandType, WaveletSpec};

/// 32-byte digest of a canonical little-endian serialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContentHash(pub [u8; 32]);

impl ContentHash {
    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl std::fmt::Display for ContentHash {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.to_hex())
    }
}

pub fn geometry_hash(geom: &Geometry) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"GEOM1");
    h.update((geom.angles.len() as u64).to_le_bytes());
    for a in &geom.angles {
        h.update(a.to_le_bytes());
    }
    h.update((geom.n_detectors as u64).to_le_bytes());
    h.update((geom.image_side as u64).to_le_bytes());
    h.update(geom.pixel_size.to_le_bytes());
    h.update(geom.norm_scale.to_le_bytes());
    h.update(geom.detector_span.to_le_bytes());
    h.finalize().into()
}

// ---------------------------------------------------------------------------
// PFM
// ---------------------------------------------------------------------------

/// Writes a 2D array as a grayscale PFM (f32, little-endian, bottom-up rows).
pub fn save_pfm(path: &Path, data: &Array2<f64>) -> Result<()> {
    let (rows, cols) = data.dim();
    let mut buf = Vec::with_capacity(64 + rows * cols * 4);
    buf.extend_from_slice(format!("PF\n{cols} {rows}\n-1.0\n").as_bytes());
    for r in (0..rows).rev() {
        for c in 0..cols {
            buf.extend_from_slice(&(data[[r, c]] as f32).to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| LactError::storage(path, e))
}

pub fn load_pfm(path: &Path) -> Result<Array2<f64>> {
    let bytes = fs::read(path).map_err(|e| LactError::storage(path, e))?;
    // Header: three newline-terminated fields.
    let mut pos = 0usize;
    let mut fields = Vec::new();
    for _ in 0..3 {
        let nl = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| LactError::format(path, "truncated PFM header"))?;
        fields.push(
            std::str::from_utf8(&bytes[pos..pos + nl])
                .map_err(|_| LactError::format(path, "non-UTF8 PFM header"))?
                .to_string(),
        );
        pos += nl + 1;
    }
    if fields[0] != "PF" {
        return Err(LactError::format(path, format!("bad PFM magic '{}'", fields[0])));
    }
    let dims: Vec<&str> = fields[1].split_whitespace().collect();
    if dims.len() != 2 {
        return Err(LactError::format(path, "bad PFM dimensions"));
    }
    let cols: usize = dims[0]
        .parse()
        .map_err(|_| LactError::format(path, "bad PFM width"))?;
    let rows: usize = dims[1]
        .parse()
        .map_err(|_| LactError::format(path, "bad PFM height"))?;
    let scale: f64 = fields[2]
        .trim()
        .parse()
        .map_err(|_| LactError::format(path, "bad PFM scale"))?;
    if scale >= 0.0 {
        return Err(LactError::format(path, "big-endian PFM not supported"));
    }
    let need = rows * cols * 4;
    if bytes.len() - pos < need {
        return Err(LactError::format(path, "truncated PFM payload"));
    }
    let mut data = Array2::zeros((rows, cols));
    let mut off = pos;
    for r in (0..rows).rev() {
        for c in 0..cols {
            let v = f32::from_le_bytes(bytes[off..off + 4].try_into().expect("4 bytes"));
            data[[r, c]] = v as f64;
            off += 4;
        }
    }
    Ok(data)
}

pub fn save_image(path: &Path, image: &Image) -> Result<()> {
    save_pfm(path, image.data())
}

pub fn load_image(path: &Path) -> Result<Image> {
    Image::new(load_pfm(path)?)
}

// ---------------------------------------------------------------------------
// Sinograms: PFM + JSON geometry sidecar
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GeometryMeta {
    pub angles: Vec<f64>,
    pub n_detectors: usize,
    pub image_side: usize,
    pub pixel_size: f64,
    pub norm_scale: f64,
    pub detector_span: f64,
}

impl GeometryMeta {
    pub fn from_geometry(g: &Geometry) -> Self {
        GeometryMeta {
            angles: g.angles.clone(),
            n_detectors: g.n_detectors,
            image_side: g.image_side,
            pixel_size: g.pixel_size,
            norm_scale: g.norm_scale,
            detector_span: g.detector_span,
        }
    }

    pub fn to_geometry(&self) -> Geometry {
        Geometry {
            angles: self.angles.clone(),
            n_detectors: self.n_detectors,
            image_side: self.image_side,
            pixel_size: self.pixel_size,
            norm_scale: self.norm_scale,
            detector_span: self.detector_span,
        }
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_os_string();
    os.push(".json");
    os.into()
}

pub fn save_sinogram(path: &Path, sino: &Sinogram) -> Result<()> {
    save_pfm(path, &sino.values)?;
    write_json(&sidecar_path(path), &GeometryMeta::from_geometry(&sino.geom))
}

pub fn load_sinogram(path: &Path) -> Result<Sinogram> {
    let meta: GeometryMeta = read_json(&sidecar_path(path))?;
    let values = load_pfm(path)?;
    Sinogram::new(meta.to_geometry(), values)
}

// ---------------------------------------------------------------------------
// Canonical JSON (sorted keys)
// ---------------------------------------------------------------------------

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let canonical =
        serde_json::to_value(value).map_err(|e| LactError::storage(path, e))?;
    let text =
        serde_json::to_string_pretty(&canonical).map_err(|e| LactError::storage(path, e))?;
    fs::write(path, text).map_err(|e| LactError::storage(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| LactError::storage(path, e))?;
    serde_json::from_str(&text).map_err(|e| LactError::format(path, e.to_string()))
}

pub fn json_hash<T: Serialize>(value: &T) -> Result<ContentHash> {
    let canonical = serde_json::to_value(value)
        .map_err(|e| LactError::Config(e.to_string()))?;
    let text = serde_json::to_string(&canonical).map_err(|e| LactError::Config(e.to_string()))?;
    let mut h = Sha256::new();
    h.update(text.as_bytes());
    Ok(ContentHash(h.finalize().into()))
}

// ---------------------------------------------------------------------------
// Filter bank container ("PSDO")
// ---------------------------------------------------------------------------

const BANK_MAGIC: &[u8; 4] = b"PSDO";
const BANK_VERSION: u16 = 1;

fn bank_payload(bank: &FilterBank) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.push(bank.spec.family.id());
    buf.push(bank.spec.j);
    buf.push(bank.spec.j0);
    buf.push(0u8);
    buf.extend_from_slice(&(bank.construction_side as u32).to_le_bytes());
    buf.extend_from_slice(&bank.geometry_hash);
    buf.extend_from_slice(&(bank.filters.len() as u32).to_le_bytes());
    for (key, filter) in &bank.filters {
        buf.push(key.from.j);
        buf.push(key.from.ty.id());
        buf.push(key.to.j);
        buf.push(key.to.ty.id());
        buf.extend_from_slice(&(filter.nrows() as u32).to_le_bytes());
        for v in filter.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

/// Content hash of a bank: digest of its canonical payload.
pub fn bank_hash(bank: &FilterBank) -> ContentHash {
    let mut h = Sha256::new();
    h.update(bank_payload(bank));
    ContentHash(h.finalize().into())
}

pub fn save_bank(path: &Path, bank: &FilterBank) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(BANK_MAGIC);
    buf.extend_from_slice(&BANK_VERSION.to_le_bytes());
    buf.extend_from_slice(&bank_payload(bank));
    fs::write(path, buf).map_err(|e| LactError::storage(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(LactError::format(self.path, "truncated payload"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8")))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

pub fn load_bank(path: &Path) -> Result<FilterBank> {
    let bytes = fs::read(path).map_err(|e| LactError::storage(path, e))?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path,
    };
    let magic = r.take(4)?;
    if magic != BANK_MAGIC {
        return Err(LactError::format(path, "bad magic (expected PSDO)"));
    }
    let version = r.u16()?;
    if version != BANK_VERSION {
        return Err(LactError::format(
            path,
            format!("version mismatch: found {version}, expected {BANK_VERSION}"),
        ));
    }
    let family = Family::from_id(r.u8()?)?;
    let j = r.u8()?;
    let j0 = r.u8()?;
    let _pad = r.u8()?;
    let spec = WaveletSpec::new(family, j, j0)?;
    let construction_side = r.u32()? as usize;
    let mut geometry_hash = [0u8; 32];
    geometry_hash.copy_from_slice(r.take(32)?);
    let count = r.u32()? as usize;
    let mut filters = BTreeMap::new();
    for _ in 0..count {
        let fj = r.u8()?;
        let ft = SubbandType::from_id(r.u8()?)?;
        let tj = r.u8()?;
        let tt = SubbandType::from_id(r.u8()?)?;
        let side = r.u32()? as usize;
        let mut data = Vec::with_capacity(side * side);
        for _ in 0..side * side {
            data.push(r.f64()?);
        }
        let filter = Array2::from_shape_vec((side, side), data).expect("shape");
        filters.insert(
            FilterKey::new(SubbandId::new(fj, ft), SubbandId::new(tj, tt)),
            filter,
        );
    }
    if !r.done() {
        return Err(LactError::format(path, "trailing bytes after payload"));
    }
    Ok(FilterBank {
        spec,
        geometry_hash,
        construction_side,
        filters,
    })
}

// ---------------------------------------------------------------------------
// Dataset manifest
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    pub image: String,
    pub sinogram: String,
    pub noisy_sinogram: String,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub geometry: GeometryMeta,
    pub sigma_rel: f64,
    pub master_seed: u64,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn split_entries(&self, split: Split) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.split == split).collect()
    }
}

pub fn save_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    write_json(path, manifest)
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    read_json(path)
}

// ---------------------------------------------------------------------------
// Checkpoints ("PSCK") -- serialization lives here, the model types in the
// network module.
// ---------------------------------------------------------------------------

const CKPT_MAGIC: &[u8; 4] = b"PSCK";
const CKPT_VERSION: u16 = 1;

use crate::psidonet::{Checkpoint, GroupParams, ModelParams, Variant};

fn params_payload(p: &ModelParams) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.push(match p.variant {
        Variant::FilterBased => 0u8,
        Variant::OperatorBased => 1u8,
    });
    buf.push(p.positivity_constrained as u8);
    buf.push(p.spec.family.id());
    buf.push(p.spec.j);
    buf.push(p.spec.j0);
    buf.extend_from_slice(&(p.n_blocks as u32).to_le_bytes());
    buf.extend_from_slice(&(p.n_groups as u32).to_le_bytes());
    buf.extend_from_slice(&(p.tau as u32).to_le_bytes());
    for g in &p.groups {
        buf.extend_from_slice(&g.gamma_raw.to_le_bytes());
        buf.extend_from_slice(&g.alpha.to_le_bytes());
        buf.extend_from_slice(&g.beta.to_le_bytes());
        buf.extend_from_slice(&(g.zeta.len() as u32).to_le_bytes());
        for (key, z) in &g.zeta {
            buf.push(key.from.j);
            buf.push(key.from.ty.id());
            buf.push(key.to.j);
            buf.push(key.to.ty.id());
            for v in z.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    buf
}

pub fn params_hash(p: &ModelParams) -> ContentHash {
    let mut h = Sha256::new();
    h.update(params_payload(p));
    ContentHash(h.finalize().into())
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CKPT_MAGIC);
    buf.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    buf.extend_from_slice(&ckpt.geometry_hash);
    buf.extend_from_slice(&ckpt.bank_hash.unwrap_or([0u8; 32]));
    buf.extend_from_slice(&params_payload(&ckpt.params));
    buf.extend_from_slice(&(ckpt.history.len() as u32).to_le_bytes());
    for &(step, loss) in &ckpt.history {
        buf.extend_from_slice(&(step as u64).to_le_bytes());
        buf.extend_from_slice(&loss.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| LactError::storage(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| LactError::storage(path, e))?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path,
    };
    let magic = r.take(4)?;
    if magic != CKPT_MAGIC {
        return Err(LactError::format(path, "bad magic (expected PSCK)"));
    }
    let version = r.u16()?;
    if version != CKPT_VERSION {
        return Err(LactError::format(
            path,
            format!("version mismatch: found {version}, expected {CKPT_VERSION}"),
        ));
    }
    let mut geometry_hash = [0u8; 32];
    geometry_hash.copy_from_slice(r.take(32)?);
    let mut bank_hash_raw = [0u8; 32];
    bank_hash_raw.copy_from_slice(r.take(32)?);
    let bank_hash = if bank_hash_raw == [0u8; 32] {
        None
    } else {
        Some(bank_hash_raw)
    };
    let variant = match r.u8()? {
        0 => Variant::FilterBased,
        1 => Variant::OperatorBased,
        other => {
            return Err(LactError::format(path, format!("unknown variant id {other}")));
        }
    };
    let positivity = r.u8()? != 0;
    let family = Family::from_id(r.u8()?)?;
    let j = r.u8()?;
    let j0 = r.u8()?;
    let spec = WaveletSpec::new(family, j, j0)?;
    let n_blocks = r.u32()? as usize;
    let n_groups = r.u32()? as usize;
    let tau = r.u32()? as usize;
    let mut groups = Vec::with_capacity(n_groups);
    for _ in 0..n_groups {
        let gamma_raw = r.f64()?;
        let alpha = r.f64()?;
        let beta = r.f64()?;
        let nz = r.u32()? as usize;
        let mut zeta = BTreeMap::new();
        for _ in 0..nz {
            let fj = r.u8()?;
            let ft = SubbandType::from_id(r.u8()?)?;
            let tj = r.u8()?;
            let tt = SubbandType::from_id(r.u8()?)?;
            let mut data = Vec::with_capacity(tau * tau);
            for _ in 0..tau * tau {
                data.push(r.f64()?);
            }
            zeta.insert(
                FilterKey::new(SubbandId::new(fj, ft), SubbandId::new(tj, tt)),
                Array2::from_shape_vec((tau, tau), data).expect("shape"),
            );
        }
        groups.push(GroupParams {
            gamma_raw,
            alpha,
            beta,
            zeta,
        });
    }
    let n_hist = r.u32()? as usize;
    let mut history = Vec::with_capacity(n_hist);
    for _ in 0..n_hist {
        let step = r.u64()? as usize;
        let loss = r.f64()?;
        history.push((step, loss));
    }
    if !r.done() {
        return Err(LactError::format(path, "trailing bytes after payload"));
    }
    let params = ModelParams {
        variant,
        n_blocks,
        n_groups,
        positivity_constrained: positivity,
        tau,
        spec,
        groups,
    };
    params.validate()?;
    Ok(Checkpoint {
        params,
        geometry_hash,
        bank_hash,
        history,
    })
}
