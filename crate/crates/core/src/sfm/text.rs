use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;

use super::{CameraModel, Point2D, Point3D, SfmCamera, SfmError, SfmImage, SfmModel, TrackElement};

fn syntax(file: &str, line: usize, message: impl Into<String>) -> SfmError {
    SfmError::Syntax {
        file: file.into(),
        line,
        message: message.into(),
    }
}

fn field<T: FromStr>(
    file: &str,
    line: usize,
    tok: Option<&str>,
    what: &str,
) -> Result<T, SfmError> {
    let tok = tok.ok_or_else(|| syntax(file, line, format!("missing {what}")))?;
    tok.parse()
        .map_err(|_| syntax(file, line, format!("bad {what} '{tok}'")))
}

/// Non-comment, non-blank lines with 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

pub(crate) fn parse_cameras(text: &str) -> Result<IndexMap<u32, SfmCamera>, SfmError> {
    const F: &str = "cameras.txt";
    let mut out = IndexMap::new();
    for (ln, line) in content_lines(text) {
        let mut it = line.split_whitespace();
        let id: u32 = field(F, ln, it.next(), "camera id")?;
        let name = it.next().ok_or_else(|| syntax(F, ln, "missing model"))?;
        let model = CameraModel::from_name(name).ok_or_else(|| SfmError::UnknownModelName {
            file: F.into(),
            camera_id: id,
            name: name.into(),
        })?;
        let width = field(F, ln, it.next(), "width")?;
        let height = field(F, ln, it.next(), "height")?;
        let params: Vec<f64> = it
            .map(|t| field(F, ln, Some(t), "parameter"))
            .collect::<Result<_, _>>()?;
        if params.len() != model.param_count() {
            return Err(syntax(
                F,
                ln,
                format!(
                    "{} expects {} parameters, got {}",
                    name,
                    model.param_count(),
                    params.len()
                ),
            ));
        }
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
    Ok(out)
}

pub(crate) fn parse_images(text: &str) -> Result<IndexMap<u32, SfmImage>, SfmError> {
    const F: &str = "images.txt";
    let mut out = IndexMap::new();
    // Each image is a pose line followed by an observation line, which may be
    // empty, so blank lines are significant here.
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim_start().starts_with('#'));
    while let Some((ln, line)) = lines.next() {
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let id: u32 = field(F, ln, it.next(), "image id")?;
        let mut qvec = [0.0; 4];
        for q in &mut qvec {
            *q = field(F, ln, it.next(), "quaternion")?;
        }
        let mut tvec = [0.0; 3];
        for t in &mut tvec {
            *t = field(F, ln, it.next(), "translation")?;
        }
        let camera_id = field(F, ln, it.next(), "camera id")?;
        let name = it.collect::<Vec<_>>().join(" ");
        if name.is_empty() {
            return Err(syntax(F, ln, "missing image name"));
        }
        let (pln, pline) = lines.next().unwrap_or((ln + 1, ""));
        let toks: Vec<&str> = pline.split_whitespace().collect();
        if !toks.len().is_multiple_of(3) {
            return Err(syntax(
                F,
                pln,
                "observation line must hold X Y POINT3D_ID triples",
            ));
        }
        let mut points2d = Vec::with_capacity(toks.len() / 3);
        for c in toks.chunks(3) {
            let x = field(F, pln, Some(c[0]), "x")?;
            let y = field(F, pln, Some(c[1]), "y")?;
            let id: i64 = field(F, pln, Some(c[2]), "point3D id")?;
            let point3d_id = match id {
                -1 => None,
                i if i >= 0 => Some(i as u64),
                _ => return Err(syntax(F, pln, format!("bad point3D id {id}"))),
            };
            points2d.push(Point2D { x, y, point3d_id });
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
    Ok(out)
}

pub(crate) fn parse_points3d(text: &str) -> Result<IndexMap<u64, Point3D>, SfmError> {
    const F: &str = "points3D.txt";
    let mut out = IndexMap::new();
    for (ln, line) in content_lines(text) {
        let mut it = line.split_whitespace();
        let id: u64 = field(F, ln, it.next(), "point id")?;
        let xyz = [
            field(F, ln, it.next(), "x")?,
            field(F, ln, it.next(), "y")?,
            field(F, ln, it.next(), "z")?,
        ];
        let rgb = [
            field(F, ln, it.next(), "r")?,
            field(F, ln, it.next(), "g")?,
            field(F, ln, it.next(), "b")?,
        ];
        let error = field(F, ln, it.next(), "error")?;
        let rest: Vec<&str> = it.collect();
        if !rest.len().is_multiple_of(2) {
            return Err(syntax(F, ln, "track must hold IMAGE_ID POINT2D_IDX pairs"));
        }
        let track = rest
            .chunks(2)
            .map(|c| {
                Ok(TrackElement {
                    image_id: field(F, ln, Some(c[0]), "track image id")?,
                    point2d_idx: field(F, ln, Some(c[1]), "track point index")?,
                })
            })
            .collect::<Result<_, SfmError>>()?;
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
    Ok(out)
}

pub(crate) fn format_cameras(cams: &IndexMap<u32, SfmCamera>) -> String {
    let mut s = String::from("# Camera list with one line of data per camera:\n#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n");
    writeln!(s, "# Number of cameras: {}", cams.len()).unwrap();
    for c in cams.values() {
        write!(s, "{} {} {} {}", c.id, c.model.name(), c.width, c.height).unwrap();
        for p in &c.params {
            write!(s, " {p:?}").unwrap();
        }
        s.push('\n');
    }
    s
}

pub(crate) fn format_images(images: &IndexMap<u32, SfmImage>) -> String {
    let mut s = String::from(
        "# Image list with two lines of data per image:\n#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n#   POINTS2D[] as (X, Y, POINT3D_ID)\n",
    );
    writeln!(s, "# Number of images: {}", images.len()).unwrap();
    for img in images.values() {
        let [qw, qx, qy, qz] = img.qvec;
        let [tx, ty, tz] = img.tvec;
        writeln!(
            s,
            "{} {qw:?} {qx:?} {qy:?} {qz:?} {tx:?} {ty:?} {tz:?} {} {}",
            img.id, img.camera_id, img.name
        )
        .unwrap();
        let obs: Vec<String> = img
            .points2d
            .iter()
            .map(|p| match p.point3d_id {
                Some(id) => format!("{:?} {:?} {id}", p.x, p.y),
                None => format!("{:?} {:?} -1", p.x, p.y),
            })
            .collect();
        s.push_str(&obs.join(" "));
        s.push('\n');
    }
    s
}

pub(crate) fn format_points3d(points: &IndexMap<u64, Point3D>) -> String {
    let mut s = String::from(
        "# 3D point list with one line of data per point:\n#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)\n",
    );
    writeln!(s, "# Number of points: {}", points.len()).unwrap();
    for p in points.values() {
        let [x, y, z] = p.xyz;
        let [r, g, b] = p.rgb;
        write!(s, "{} {x:?} {y:?} {z:?} {r} {g} {b} {:?}", p.id, p.error).unwrap();
        for el in &p.track {
            write!(s, " {} {}", el.image_id, el.point2d_idx).unwrap();
        }
        s.push('\n');
    }
    s
}

fn read_string(dir: &Path, name: &str) -> Result<String, SfmError> {
    let path = dir.join(name);
    fs::read_to_string(&path).map_err(|source| SfmError::Io { path, source })
}

/// Reads the text variant of a model; floats are written with round-trip
/// precision so text and binary models convert losslessly.
pub fn read_text(dir: &Path) -> Result<SfmModel, SfmError> {
    let model = SfmModel {
        cameras: parse_cameras(&read_string(dir, "cameras.txt")?)?,
        images: parse_images(&read_string(dir, "images.txt")?)?,
        points3d: parse_points3d(&read_string(dir, "points3D.txt")?)?,
    };
    model.validate()?;
    Ok(model)
}

pub fn write_text(model: &SfmModel, dir: &Path) -> Result<(), SfmError> {
    fs::create_dir_all(dir).map_err(|source| SfmError::Io {
        path: dir.to_owned(),
        source,
    })?;
    for (name, body) in [
        ("cameras.txt", format_cameras(&model.cameras)),
        ("images.txt", format_images(&model.images)),
        ("points3D.txt", format_points3d(&model.points3d)),
    ] {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|source| SfmError::Io { path, source })?;
    }
    Ok(())
}
