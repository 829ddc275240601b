//! On-disk formats.
//!
//! - `TRV1` videos: little-endian header (height, width, channels, n_bins as
//!   u32, bin width and time origin as f64) followed by f32 values in
//!   `(row, col, channel, bin)` order.
//! - `TFG1` grids and `ADM1` optimizer states: magic, u32 length of a JSON
//!   header, the header, then f64 blocks.
//! - Cameras, manifests and training state as JSON; loss logs as CSV.
//!
//! Every writer goes through a temporary file in the target directory and a
//! rename, so partially written files never carry the final name.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::field::{GridSpec, TransientFieldGrid};
use crate::optim::{AdamState, LossRecord};
use crate::sim::dataset::{view_file_stem, Dataset, DatasetView, Manifest};
use crate::video::TransientVideo;

pub const VIDEO_MAGIC: &[u8; 4] = b"TRV1";
pub const GRID_MAGIC: &[u8; 4] = b"TFG1";
pub const ADAM_MAGIC: &[u8; 4] = b"ADM1";
pub const MANIFEST_FILE: &str = "manifest.json";

const VIDEO_HEADER_LEN: usize = 4 + 4 * 4 + 2 * 8;

/// Writes `bytes` to `path` via a sibling temporary file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::format(path, "not a file path"))?
        .to_string_lossy();
    let tmp = dir.join(format!(".{name}.tmp"));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn encode_video(v: &TransientVideo) -> Vec<u8> {
    let mut out = Vec::with_capacity(VIDEO_HEADER_LEN + 4 * v.data().len());
    out.extend_from_slice(VIDEO_MAGIC);
    for d in [v.height(), v.width(), v.channels(), v.n_bins()] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&v.bin_width_s().to_le_bytes());
    out.extend_from_slice(&v.t0_offset_bins().to_le_bytes());
    for x in v.data() {
        out.extend_from_slice(&(*x as f32).to_le_bytes());
    }
    out
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

fn f64_at(b: &[u8], at: usize) -> f64 {
    f64::from_le_bytes(b[at..at + 8].try_into().expect("8 bytes"))
}

pub fn decode_video(bytes: &[u8], path: &Path) -> Result<TransientVideo> {
    if bytes.len() < VIDEO_HEADER_LEN || &bytes[..4] != VIDEO_MAGIC {
        return Err(Error::format(path, "missing TRV1 header"));
    }
    let dims: Vec<usize> = (0..4).map(|i| u32_at(bytes, 4 + 4 * i) as usize).collect();
    let w = f64_at(bytes, 20);
    let t0 = f64_at(bytes, 28);
    let n = dims.iter().product::<usize>();
    let payload = &bytes[VIDEO_HEADER_LEN..];
    if payload.len() != 4 * n {
        return Err(Error::format(path, format!("payload holds {} bytes, header implies {}", payload.len(), 4 * n)));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    TransientVideo::from_data(dims[0], dims[1], dims[2], dims[3], w, t0, data).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_video(path: &Path, v: &TransientVideo) -> Result<()> {
    write_atomic(path, &encode_video(v))
}

pub fn read_video(path: &Path) -> Result<TransientVideo> {
    decode_video(&read_bytes(path)?, path)
}

pub fn to_json_pretty<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_vec_pretty(value).map_err(|e| Error::InvalidData(e.to_string()))?;
    s.push(b'\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, &to_json_pretty(value)?)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_camera(path: &Path, cam: &CameraModel) -> Result<()> {
    write_json(path, cam)
}

pub fn read_camera(path: &Path) -> Result<CameraModel> {
    read_json(path)
}

/// A camera file holding either one camera or a list of them.
#[derive(Deserialize)]
#[serde(untagged)]
enum CameraList {
    One(CameraModel),
    Many(Vec<CameraModel>),
}

pub fn read_cameras(path: &Path) -> Result<Vec<CameraModel>> {
    Ok(match read_json::<CameraList>(path)? {
        CameraList::One(c) => vec![c],
        CameraList::Many(v) => v,
    })
}

fn encode_blocks(magic: &[u8; 4], header: &[u8], blocks: &[&[f64]]) -> Vec<u8> {
    let total: usize = blocks.iter().map(|b| b.len()).sum();
    let mut out = Vec::with_capacity(8 + header.len() + 8 * total);
    out.extend_from_slice(magic);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header);
    for b in blocks {
        for x in *b {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

fn decode_blocks<'a>(bytes: &'a [u8], magic: &[u8; 4], path: &Path) -> Result<(&'a [u8], Vec<f64>)> {
    if bytes.len() < 8 || &bytes[..4] != magic {
        return Err(Error::format(path, format!("missing {} header", String::from_utf8_lossy(magic))));
    }
    let hl = u32_at(bytes, 4) as usize;
    if bytes.len() < 8 + hl || (bytes.len() - 8 - hl) % 8 != 0 {
        return Err(Error::format(path, "truncated file"));
    }
    let values = bytes[8 + hl..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((&bytes[8..8 + hl], values))
}

fn take(values: &mut std::vec::IntoIter<f64>, n: usize, path: &Path) -> Result<Vec<f64>> {
    let v: Vec<f64> = values.by_ref().take(n).collect();
    if v.len() != n {
        return Err(Error::format(path, "payload shorter than header implies"));
    }
    Ok(v)
}

pub fn encode_grid(grid: &TransientFieldGrid) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(grid.spec()).map_err(|e| Error::InvalidData(e.to_string()))?;
    let mut blocks: Vec<&[f64]> = vec![grid.density_raw(), grid.transient_raw()];
    if let Some(sh) = grid.sh_coeffs() {
        blocks.push(sh);
    }
    Ok(encode_blocks(GRID_MAGIC, &header, &blocks))
}

pub fn decode_grid(bytes: &[u8], path: &Path) -> Result<TransientFieldGrid> {
    let (header, values) = decode_blocks(bytes, GRID_MAGIC, path)?;
    let spec: GridSpec = serde_json::from_slice(header).map_err(|e| Error::format(path, e.to_string()))?;
    spec.validate().map_err(|e| Error::format(path, e.to_string()))?;
    let nv = spec.n_voxels();
    let sh_n = spec.sh_degree.map(|l| nv * crate::field::sh_len(l));
    let expect = nv + nv * spec.pixel_len() + sh_n.unwrap_or(0);
    if values.len() != expect {
        return Err(Error::format(path, format!("{} parameters, header implies {expect}", values.len())));
    }
    let mut it = values.into_iter();
    let density = take(&mut it, nv, path)?;
    let transient = take(&mut it, nv * spec.pixel_len(), path)?;
    let sh = sh_n.map(|n| take(&mut it, n, path)).transpose()?;
    TransientFieldGrid::from_parts(spec, density, transient, sh).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_grid(path: &Path, grid: &TransientFieldGrid) -> Result<()> {
    write_atomic(path, &encode_grid(grid)?)
}

pub fn read_grid(path: &Path) -> Result<TransientFieldGrid> {
    decode_grid(&read_bytes(path)?, path)
}

#[derive(Serialize, Deserialize)]
struct AdamHeader {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    sizes: Vec<usize>,
}

pub fn encode_adam(a: &AdamState) -> Result<Vec<u8>> {
    let header = AdamHeader {
        beta1: a.beta1,
        beta2: a.beta2,
        eps: a.eps,
        step: a.step,
        sizes: a.m.iter().map(Vec::len).collect(),
    };
    let h = serde_json::to_vec(&header).map_err(|e| Error::InvalidData(e.to_string()))?;
    let blocks: Vec<&[f64]> = a.m.iter().chain(&a.v).map(Vec::as_slice).collect();
    Ok(encode_blocks(ADAM_MAGIC, &h, &blocks))
}

pub fn decode_adam(bytes: &[u8], path: &Path) -> Result<AdamState> {
    let (header, values) = decode_blocks(bytes, ADAM_MAGIC, path)?;
    let h: AdamHeader = serde_json::from_slice(header).map_err(|e| Error::format(path, e.to_string()))?;
    if values.len() != 2 * h.sizes.iter().sum::<usize>() {
        return Err(Error::format(path, "moment payload does not match header sizes"));
    }
    let mut it = values.into_iter();
    let m = h.sizes.iter().map(|n| take(&mut it, *n, path)).collect::<Result<Vec<_>>>()?;
    let v = h.sizes.iter().map(|n| take(&mut it, *n, path)).collect::<Result<Vec<_>>>()?;
    Ok(AdamState {
        beta1: h.beta1,
        beta2: h.beta2,
        eps: h.eps,
        step: h.step,
        m,
        v,
    })
}

pub fn write_adam(path: &Path, a: &AdamState) -> Result<()> {
    write_atomic(path, &encode_adam(a)?)
}

pub fn read_adam(path: &Path) -> Result<AdamState> {
    decode_adam(&read_bytes(path)?, path)
}

pub fn loss_log_csv(log: &[LossRecord]) -> String {
    let mut s = String::from("iter,loss,lr\n");
    for r in log {
        s.push_str(&format!("{},{:e},{:e}\n", r.iter, r.loss, r.lr));
    }
    s
}

pub fn parse_loss_log_csv(text: &str, path: &Path) -> Result<Vec<LossRecord>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("iter,loss,lr") {
        return Err(Error::format(path, "loss log must start with `iter,loss,lr`"));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            let bad = || Error::format(path, format!("bad loss record on line {}", i + 2));
            if f.len() != 3 {
                return Err(bad());
            }
            Ok(LossRecord {
                iter: f[0].trim().parse().map_err(|_| bad())?,
                loss: f[1].trim().parse().map_err(|_| bad())?,
                lr: f[2].trim().parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

pub fn write_loss_log(path: &Path, log: &[LossRecord]) -> Result<()> {
    write_atomic(path, loss_log_csv(log).as_bytes())
}

pub fn read_loss_log(path: &Path) -> Result<Vec<LossRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_loss_log_csv(&text, path)
}

/// Writes every view file, then the manifest.
pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (v, mv) in ds.views.iter().zip(&ds.manifest.views) {
        write_camera(&dir.join(&mv.camera), &v.camera)?;
        write_video(&dir.join(&mv.video), &v.video)?;
    }
    write_json(&dir.join(MANIFEST_FILE), &ds.manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    read_json(&dir.join(MANIFEST_FILE))
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    let views = manifest
        .views
        .iter()
        .map(|mv| {
            Ok(DatasetView {
                id: mv.id,
                split: mv.split,
                camera: read_camera(&dir.join(&mv.camera))?,
                video: read_video(&dir.join(&mv.video))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { views, manifest })
}

/// Paths of the files a dataset directory holds, manifest last.
pub fn dataset_files(dir: &Path, manifest: &Manifest) -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = manifest
        .views
        .iter()
        .flat_map(|v| [dir.join(&v.camera), dir.join(&v.video)])
        .collect();
    out.push(dir.join(MANIFEST_FILE));
    out
}

pub fn default_view_paths(dir: &Path, id: usize) -> (PathBuf, PathBuf) {
    let stem = view_file_stem(id);
    (dir.join(format!("{stem}.json")), dir.join(format!("{stem}.trv")))
}
