//! Binary little-endian PLY: float xyz, optional uchar rgb, uchar-count int faces.

use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::Vec3;
use crate::mesh::TriMesh;

pub fn mesh_to_bytes(mesh: &TriMesh) -> Vec<u8> {
    let mut head = String::from("ply\nformat binary_little_endian 1.0\n");
    head += &format!("element vertex {}\n", mesh.vertices.len());
    head += "property float x\nproperty float y\nproperty float z\n";
    if mesh.colors.is_some() {
        head += "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    }
    if !mesh.faces.is_empty() {
        head += &format!("element face {}\n", mesh.faces.len());
        head += "property list uchar int vertex_indices\n";
    }
    head += "end_header\n";
    let mut out = head.into_bytes();
    for (i, v) in mesh.vertices.iter().enumerate() {
        for x in v {
            out.extend_from_slice(&(*x as f32).to_le_bytes());
        }
        if let Some(c) = &mesh.colors {
            out.extend_from_slice(&c[i]);
        }
    }
    for f in &mesh.faces {
        out.push(3);
        for &i in f {
            out.extend_from_slice(&(i as i32).to_le_bytes());
        }
    }
    out
}

#[derive(Clone, Copy, PartialEq, Debug)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return Err(Error::Malformed(format!("unknown PLY type {s}"))),
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

fn parse_header(buf: &[u8]) -> Result<(Vec<Element>, usize)> {
    let bad = |m: &str| Error::Malformed(format!("PLY header: {m}"));
    let end = buf
        .windows(11)
        .position(|w| w == b"end_header\n")
        .ok_or_else(|| bad("no end_header"))?;
    let text = std::str::from_utf8(&buf[..end]).map_err(|_| bad("not ASCII"))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(bad("missing magic"));
    }
    let mut elements: Vec<Element> = Vec::new();
    let mut format_ok = false;
    for line in lines {
        let t: Vec<&str> = line.split_whitespace().collect();
        match t.as_slice() {
            [] | ["comment", ..] | ["obj_info", ..] => {}
            ["format", "binary_little_endian", "1.0"] => format_ok = true,
            ["format", f, ..] => return Err(bad(&format!("unsupported format {f}"))),
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| bad("bad element count"))?,
                props: Vec::new(),
            }),
            ["property", "list", c, i, name] => elements
                .last_mut()
                .ok_or_else(|| bad("property before element"))?
                .props
                .push(Property::List(name.to_string(), Scalar::parse(c)?, Scalar::parse(i)?)),
            ["property", ty, name] => elements
                .last_mut()
                .ok_or_else(|| bad("property before element"))?
                .props
                .push(Property::Scalar(name.to_string(), Scalar::parse(ty)?)),
            _ => return Err(bad(&format!("unexpected line {line:?}"))),
        }
    }
    if !format_ok {
        return Err(bad("missing format line"));
    }
    Ok((elements, end + 11))
}

pub fn mesh_from_bytes(buf: &[u8]) -> Result<TriMesh> {
    let (elements, mut pos) = parse_header(buf)?;
    let truncated = || Error::Malformed("PLY body truncated".into());
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = buf.get(pos..pos + n).ok_or_else(truncated)?;
        pos += n;
        Ok(s)
    };
    let mut mesh = TriMesh::default();
    for el in &elements {
        let has = |n: &str| el.props.iter().any(|p| matches!(p, Property::Scalar(s, _) if s == n));
        if el.name == "vertex" {
            if !(has("x") && has("y") && has("z")) {
                return Err(Error::Malformed("PLY vertices lack x, y, z".into()));
            }
            let colored = has("red") && has("green") && has("blue");
            if colored {
                mesh.colors = Some(Vec::with_capacity(el.count));
            }
            for _ in 0..el.count {
                let (mut p, mut c) = ([0.0; 3], [0u8; 3]);
                for prop in &el.props {
                    match prop {
                        Property::Scalar(name, ty) => {
                            let v = ty.read(take(ty.size())?);
                            match name.as_str() {
                                "x" => p[0] = v,
                                "y" => p[1] = v,
                                "z" => p[2] = v,
                                "red" => c[0] = v as u8,
                                "green" => c[1] = v as u8,
                                "blue" => c[2] = v as u8,
                                _ => {}
                            }
                        }
                        Property::List(_, cty, ity) => {
                            let n = cty.read(take(cty.size())?) as usize;
                            take(n * ity.size())?;
                        }
                    }
                }
                mesh.vertices.push(p);
                if let Some(cs) = mesh.colors.as_mut() {
                    cs.push(c);
                }
            }
        } else if el.name == "face" {
            for fi in 0..el.count {
                for prop in &el.props {
                    match prop {
                        Property::List(name, cty, ity) if name == "vertex_indices" || name == "vertex_index" => {
                            let n = cty.read(take(cty.size())?) as usize;
                            if n != 3 {
                                return Err(Error::Malformed(format!("face {fi} has {n} vertices")));
                            }
                            let mut f = [0u32; 3];
                            for slot in f.iter_mut() {
                                let v = ity.read(take(ity.size())?);
                                if v < 0.0 {
                                    return Err(Error::IndexOutOfRange {
                                        face: fi,
                                        index: usize::MAX,
                                        count: mesh.vertices.len(),
                                    });
                                }
                                *slot = v as u32;
                            }
                            mesh.faces.push(f);
                        }
                        Property::List(_, cty, ity) => {
                            let n = cty.read(take(cty.size())?) as usize;
                            take(n * ity.size())?;
                        }
                        Property::Scalar(_, ty) => {
                            take(ty.size())?;
                        }
                    }
                }
            }
        } else {
            return Err(Error::Malformed(format!("unsupported PLY element {}", el.name)));
        }
    }
    let nv = mesh.vertices.len();
    for (fi, f) in mesh.faces.iter().enumerate() {
        if let Some(&i) = f.iter().find(|&&i| i as usize >= nv) {
            return Err(Error::IndexOutOfRange {
                face: fi,
                index: i as usize,
                count: nv,
            });
        }
    }
    Ok(mesh)
}

pub fn save_mesh(mesh: &TriMesh, path: &Path) -> Result<()> {
    std::fs::write(path, mesh_to_bytes(mesh)).map_err(|e| Error::io(path, e))
}

pub fn load_mesh(path: &Path) -> Result<TriMesh> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    mesh_from_bytes(&buf)
}

/// Point cloud as a face-less PLY.
pub fn save_points(points: &[Vec3], path: &Path) -> Result<()> {
    save_mesh(
        &TriMesh {
            vertices: points.to_vec(),
            ..TriMesh::default()
        },
        path,
    )
}
