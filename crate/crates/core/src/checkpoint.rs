//! Binary checkpoint of a [`DynamicScene`].
//!
//! Layout, all integers u32 LE and all arrays f32 LE:
//!
//! ```text
//! magic      16 bytes  "ENDORECON-CKPT\0\0"
//! version    u32       1
//! bounds     6 x f64   min xyz, max xyz
//! -- canonical field --
//! dims       3 x u32   grid vertices along x, y, z
//! channels   u32       feature channels C
//! layers     u32, then that many u32 widths of the shading network
//! shift      f64       density activation shift
//! scale      f64       density activation scale
//! density    f32[X*Y*Z]
//! features   f32[X*Y*Z*C]  channel-last
//! shading    f32[...]      per layer: weights (out x in, row-major) then bias
//! -- motion field --
//! dims       4 x u32   x, y, z, t vertices
//! channels   u32       C_T
//! ranks      4 x u32   groups leaving out x, y, z, t
//! layers     u32, then the displacement network widths
//! per group: line f32[n_axis*R], volume f32[n_a*n_b*n_c*R], basis f32[R*C_T]
//! displacement f32[...]
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::field::VoxelField;
use crate::grid::{Aabb, Grid, GridSpec};
use crate::mlp::Mlp;
use crate::motion::{MotionField, MotionGroup};
use crate::scene::DynamicScene;

pub const MAGIC: [u8; 16] = *b"ENDORECON-CKPT\0\0";
pub const VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32s(&mut self, v: &[f64]) {
        for x in v {
            self.0.extend_from_slice(&(*x as f32).to_le_bytes());
        }
    }
    fn sizes(&mut self, s: &[usize]) {
        self.u32(s.len());
        for &w in s {
            self.u32(w);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Malformed(format!("checkpoint truncated at byte {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Malformed("array size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect())
    }
    fn sizes(&mut self) -> Result<Vec<usize>> {
        let n = self.u32()?;
        if n > 64 {
            return Err(Error::Malformed(format!("{n} network layers")));
        }
        (0..n).map(|_| self.u32()).collect()
    }
}

fn mlp_len(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

pub fn to_bytes(scene: &DynamicScene) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(&MAGIC);
    w.u32(VERSION as usize);
    let f = &scene.field;
    let b = f.bounds();
    for v in b.min.iter().chain(&b.max) {
        w.f64(*v);
    }
    for d in f.spec().dims {
        w.u32(d);
    }
    w.u32(f.feature_channels());
    w.sizes(f.shading.sizes());
    w.f64(f.density_shift);
    w.f64(f.density_scale);
    w.f32s(&f.density.data);
    w.f32s(&f.features.data);
    w.f32s(&f.shading.params);

    let m = &scene.motion;
    for d in m.dims {
        w.u32(d);
    }
    w.u32(m.channels);
    for g in &m.groups {
        w.u32(g.rank);
    }
    w.sizes(m.displacement.sizes());
    for g in &m.groups {
        w.f32s(&g.line);
        w.f32s(&g.volume);
        w.f32s(&g.basis);
    }
    w.f32s(&m.displacement.params);
    w.0
}

pub fn from_bytes(buf: &[u8]) -> Result<DynamicScene> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(16)? != MAGIC {
        return Err(Error::Malformed("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::Malformed(format!("unsupported checkpoint version {version}")));
    }
    let mut mm = [0.0; 6];
    for v in mm.iter_mut() {
        *v = r.f64()?;
    }
    let bounds = Aabb::new([mm[0], mm[1], mm[2]], [mm[3], mm[4], mm[5]]);
    let dims = [r.u32()?, r.u32()?, r.u32()?];
    let ch = r.u32()?;
    let shading_sizes = r.sizes()?;
    let shift = r.f64()?;
    let scale = r.f64()?;
    let spec = GridSpec::new(dims, bounds)?;
    let n = spec.len();
    let density = Grid::from_data(spec, 1, r.f32s(n)?)?;
    let features = Grid::from_data(spec, ch, r.f32s(n * ch)?)?;
    let shading = Mlp::from_params(&shading_sizes, r.f32s(mlp_len(&shading_sizes))?)?;
    if shading.input_dim() != ch || shading.output_dim() != 3 {
        return Err(Error::Malformed("shading network does not match feature channels".into()));
    }
    let field = VoxelField {
        density,
        features,
        shading,
        density_shift: shift,
        density_scale: scale,
    };

    let mdims = [r.u32()?, r.u32()?, r.u32()?, r.u32()?];
    if mdims.iter().any(|&d| d < 2) {
        return Err(Error::Malformed(format!("motion dims {mdims:?}")));
    }
    let mch = r.u32()?;
    let ranks = [r.u32()?, r.u32()?, r.u32()?, r.u32()?];
    let disp_sizes = r.sizes()?;
    let mut groups = Vec::with_capacity(4);
    for (axis, &rank) in ranks.iter().enumerate() {
        let vol: usize = (0..4).filter(|&a| a != axis).map(|a| mdims[a]).product();
        groups.push(MotionGroup {
            axis,
            rank,
            line: r.f32s(mdims[axis] * rank)?,
            volume: r.f32s(vol * rank)?,
            basis: r.f32s(rank * mch)?,
        });
    }
    let displacement = Mlp::from_params(&disp_sizes, r.f32s(mlp_len(&disp_sizes))?)?;
    let groups: [MotionGroup; 4] = groups.try_into().unwrap();
    let motion = MotionField::from_parts(mdims, bounds, mch, groups, displacement)?;
    if r.pos != buf.len() {
        return Err(Error::Malformed(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Ok(DynamicScene { field, motion })
}

pub fn save(scene: &DynamicScene, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(scene)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<DynamicScene> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FieldConfig;
    use crate::motion::MotionConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scene() -> DynamicScene {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = FieldConfig {
            resolution: [4, 5, 6],
            feature_channels: 3,
            shading_hidden: vec![5, 4],
            alpha_init: 1e-2,
        };
        let m = MotionConfig {
            resolution: [3, 4, 3],
            time_resolution: 5,
            ranks: [1, 2, 0, 3],
            channels: 2,
            hidden: vec![4, 4],
            init_scale: 0.5,
        };
        let mut s = DynamicScene::new(&f, &m, Aabb::new([-1.0, 0.0, 1.0], [1.0, 2.0, 4.0]), 5, &mut rng).unwrap();
        for t in s.tensors_mut() {
            for v in t.iter_mut() {
                // exactly representable in f32
                *v = (rng.gen_range(-1000..1000) as f64) / 256.0;
            }
        }
        s
    }

    #[test]
    fn round_trip_is_exact_for_f32_values() {
        let s = scene();
        let bytes = to_bytes(&s);
        assert_eq!(&bytes[..16], &MAGIC);
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back, s);
        assert_eq!(to_bytes(&back), bytes);
    }

    #[test]
    fn rejects_bad_input() {
        let bytes = to_bytes(&scene());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes(&bad), Err(Error::Malformed(_))));
        assert!(from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(from_bytes(&long).is_err());
        let mut ver = bytes;
        ver[16] = 9;
        assert!(from_bytes(&ver).is_err());
    }
}
