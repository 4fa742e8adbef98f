use std::fs;
use std::path::Path;

use indexmap::IndexMap;

use super::{
    CameraModel, Point2D, Point3D, SfmCamera, SfmError, SfmImage, SfmModel, TrackElement,
    INVALID_POINT3D,
};

struct Cursor<'a> {
    file: &'static str,
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(file: &'static str, buf: &'a [u8]) -> Self {
        Self { file, buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], SfmError> {
        let rest = self.buf.len() - self.pos;
        if rest < n {
            return Err(SfmError::Truncated {
                file: self.file.into(),
                offset: self.pos,
                needed: n - rest,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], SfmError> {
        Ok(self.take(N)?.try_into().expect("slice length"))
    }

    fn u8(&mut self) -> Result<u8, SfmError> {
        Ok(self.array::<1>()?[0])
    }
    fn u32(&mut self) -> Result<u32, SfmError> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn i32(&mut self) -> Result<i32, SfmError> {
        Ok(i32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64, SfmError> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn f64(&mut self) -> Result<f64, SfmError> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    /// Element count, checked against the bytes left so corrupt headers fail
    /// before allocating.
    fn count(&mut self, min_record: usize) -> Result<usize, SfmError> {
        let at = self.pos;
        let n = self.u64()?;
        let rest = (self.buf.len() - self.pos) as u64;
        if n.saturating_mul(min_record as u64) > rest {
            let needed = n.saturating_mul(min_record as u64) - rest;
            return Err(SfmError::Truncated {
                file: self.file.into(),
                offset: at,
                needed: needed.min(usize::MAX as u64) as usize,
            });
        }
        Ok(n as usize)
    }

    fn finish(self) -> Result<(), SfmError> {
        let trailing = self.buf.len() - self.pos;
        if trailing > 0 {
            return Err(SfmError::TrailingBytes {
                file: self.file.into(),
                trailing,
            });
        }
        Ok(())
    }
}

fn read_file(dir: &Path, name: &str) -> Result<Vec<u8>, SfmError> {
    let path = dir.join(name);
    fs::read(&path).map_err(|source| SfmError::Io { path, source })
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), SfmError> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|source| SfmError::Io { path, source })
}

pub(crate) fn parse_cameras(buf: &[u8]) -> Result<IndexMap<u32, SfmCamera>, SfmError> {
    let mut c = Cursor::new("cameras.bin", buf);
    let n = c.count(4 + 4 + 16)?;
    let mut out = IndexMap::with_capacity(n);
    for _ in 0..n {
        let id = c.u32()?;
        let model_id = c.i32()?;
        let model = CameraModel::from_id(model_id).ok_or_else(|| SfmError::UnknownModel {
            file: "cameras.bin".into(),
            camera_id: id,
            model_id,
        })?;
        let width = c.u64()?;
        let height = c.u64()?;
        let params = (0..model.param_count())
            .map(|_| c.f64())
            .collect::<Result<_, _>>()?;
        out.insert(
            id,
            SfmCamera {
                id,
                model,
                width,
                height,
                params,
            },
        );
    }
    c.finish()?;
    Ok(out)
}

pub(crate) fn parse_images(buf: &[u8]) -> Result<IndexMap<u32, SfmImage>, SfmError> {
    let mut c = Cursor::new("images.bin", buf);
    let n = c.count(4 + 56 + 4 + 1 + 8)?;
    let mut out = IndexMap::with_capacity(n);
    for _ in 0..n {
        let id = c.u32()?;
        let mut qvec = [0.0; 4];
        for q in &mut qvec {
            *q = c.f64()?;
        }
        let mut tvec = [0.0; 3];
        for t in &mut tvec {
            *t = c.f64()?;
        }
        let camera_id = c.u32()?;
        let name_at = c.pos;
        let mut name_bytes = Vec::new();
        loop {
            match c.u8()? {
                0 => break,
                b => name_bytes.push(b),
            }
        }
        let name = String::from_utf8(name_bytes).map_err(|_| SfmError::BadName {
            file: "images.bin".into(),
            image_id: id,
            offset: name_at,
        })?;
        let np = c.count(24)?;
        let mut points2d = Vec::with_capacity(np);
        for _ in 0..np {
            let x = c.f64()?;
            let y = c.f64()?;
            let pid = c.u64()?;
            points2d.push(Point2D {
                x,
                y,
                point3d_id: (pid != INVALID_POINT3D).then_some(pid),
            });
        }
        out.insert(
            id,
            SfmImage {
                id,
                qvec,
                tvec,
                camera_id,
                name,
                points2d,
            },
        );
    }
    c.finish()?;
    Ok(out)
}

pub(crate) fn parse_points3d(buf: &[u8]) -> Result<IndexMap<u64, Point3D>, SfmError> {
    let mut c = Cursor::new("points3D.bin", buf);
    let n = c.count(8 + 24 + 3 + 8 + 8)?;
    let mut out = IndexMap::with_capacity(n);
    for _ in 0..n {
        let id = c.u64()?;
        let xyz = [c.f64()?, c.f64()?, c.f64()?];
        let rgb = [c.u8()?, c.u8()?, c.u8()?];
        let error = c.f64()?;
        let nt = c.count(8)?;
        let mut track = Vec::with_capacity(nt);
        for _ in 0..nt {
            track.push(TrackElement {
                image_id: c.u32()?,
                point2d_idx: c.u32()?,
            });
        }
        out.insert(
            id,
            Point3D {
                id,
                xyz,
                rgb,
                error,
                track,
            },
        );
    }
    c.finish()?;
    Ok(out)
}

pub(crate) fn encode_cameras(cams: &IndexMap<u32, SfmCamera>) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend((cams.len() as u64).to_le_bytes());
    for cam in cams.values() {
        b.extend(cam.id.to_le_bytes());
        b.extend(cam.model.id().to_le_bytes());
        b.extend(cam.width.to_le_bytes());
        b.extend(cam.height.to_le_bytes());
        for p in &cam.params {
            b.extend(p.to_le_bytes());
        }
    }
    b
}

pub(crate) fn encode_images(images: &IndexMap<u32, SfmImage>) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend((images.len() as u64).to_le_bytes());
    for img in images.values() {
        b.extend(img.id.to_le_bytes());
        for q in img.qvec {
            b.extend(q.to_le_bytes());
        }
        for t in img.tvec {
            b.extend(t.to_le_bytes());
        }
        b.extend(img.camera_id.to_le_bytes());
        b.extend(img.name.as_bytes());
        b.push(0);
        b.extend((img.points2d.len() as u64).to_le_bytes());
        for p in &img.points2d {
            b.extend(p.x.to_le_bytes());
            b.extend(p.y.to_le_bytes());
            b.extend(p.point3d_id.unwrap_or(INVALID_POINT3D).to_le_bytes());
        }
    }
    b
}

pub(crate) fn encode_points3d(points: &IndexMap<u64, Point3D>) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend((points.len() as u64).to_le_bytes());
    for p in points.values() {
        b.extend(p.id.to_le_bytes());
        for x in p.xyz {
            b.extend(x.to_le_bytes());
        }
        b.extend(p.rgb);
        b.extend(p.error.to_le_bytes());
        b.extend((p.track.len() as u64).to_le_bytes());
        for el in &p.track {
            b.extend(el.image_id.to_le_bytes());
            b.extend(el.point2d_idx.to_le_bytes());
        }
    }
    b
}

/// Reads `cameras.bin`, `images.bin` and `points3D.bin` from `dir` and
/// validates cross references.
pub fn read_binary(dir: &Path) -> Result<SfmModel, SfmError> {
    let model = SfmModel {
        cameras: parse_cameras(&read_file(dir, "cameras.bin")?)?,
        images: parse_images(&read_file(dir, "images.bin")?)?,
        points3d: parse_points3d(&read_file(dir, "points3D.bin")?)?,
    };
    model.validate()?;
    Ok(model)
}

pub fn write_binary(model: &SfmModel, dir: &Path) -> Result<(), SfmError> {
    fs::create_dir_all(dir).map_err(|source| SfmError::Io {
        path: dir.to_owned(),
        source,
    })?;
    write_file(dir, "cameras.bin", &encode_cameras(&model.cameras))?;
    write_file(dir, "images.bin", &encode_images(&model.images))?;
    write_file(dir, "points3D.bin", &encode_points3d(&model.points3d))
}
