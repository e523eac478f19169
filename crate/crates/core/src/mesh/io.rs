//! Mesh readers (OBJ, PLY ascii/binary little-endian, binary STL) and writers.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{Cursor, Read};
use std::path::Path;
use std::str::FromStr;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{MeshError, Result, TriangleMesh, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Ply,
    Stl,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        ext.parse().ok()
    }
}

impl FromStr for MeshFormat {
    type Err = MeshError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "obj" => Ok(Self::Obj),
            "ply" => Ok(Self::Ply),
            "stl" => Ok(Self::Stl),
            other => Err(MeshError::InvalidParameter(format!("unknown mesh format {other:?}"))),
        }
    }
}

pub fn load_mesh(path: &Path, format: MeshFormat) -> Result<TriangleMesh> {
    let bytes = std::fs::read(path)?;
    match format {
        MeshFormat::Obj => {
            let text = std::str::from_utf8(&bytes)
                .map_err(|e| MeshError::Parse(format!("{}: {e}", path.display())))?;
            parse_obj(text)
        }
        MeshFormat::Ply => parse_ply(&bytes),
        MeshFormat::Stl => parse_stl(&bytes),
    }
}

/// Loads a mesh, picking the format from the file extension.
pub fn load_mesh_auto(path: &Path) -> Result<TriangleMesh> {
    let format = MeshFormat::from_path(path).ok_or_else(|| {
        MeshError::InvalidParameter(format!("cannot infer mesh format of {}", path.display()))
    })?;
    load_mesh(path, format)
}

fn parse_f64(tok: Option<&str>, line: usize) -> Result<f64> {
    tok.ok_or_else(|| MeshError::Parse(format!("line {line}: missing coordinate")))?
        .parse()
        .map_err(|e| MeshError::Parse(format!("line {line}: {e}")))
}

pub fn parse_obj(text: &str) -> Result<TriangleMesh> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("v") => {
                let x = parse_f64(toks.next(), lineno)?;
                let y = parse_f64(toks.next(), lineno)?;
                let z = parse_f64(toks.next(), lineno)?;
                vertices.push(Vec3::new(x, y, z));
            }
            Some("f") => {
                let idx = toks
                    .map(|t| {
                        let head = t.split('/').next().unwrap_or_default();
                        let i: i64 = head
                            .parse()
                            .map_err(|e| MeshError::Parse(format!("line {lineno}: bad index {t:?}: {e}")))?;
                        // 1-based, negative counts back from the latest vertex
                        match i {
                            0 => Err(MeshError::Parse(format!("line {lineno}: index 0"))),
                            i if i > 0 => Ok(i as usize - 1),
                            i => usize::try_from(vertices.len() as i64 + i).map_err(|_| {
                                MeshError::Validation(format!("line {lineno}: index {i} out of range"))
                            }),
                        }
                    })
                    .collect::<Result<Vec<usize>>>()?;
                if idx.len() != 3 {
                    return Err(MeshError::Parse(format!(
                        "line {lineno}: only triangles are supported, got {} indices",
                        idx.len()
                    )));
                }
                faces.push([idx[0], idx[1], idx[2]]);
            }
            _ => {}
        }
    }
    TriangleMesh::new(vertices, faces)
}

#[derive(Debug, Clone, Copy)]
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
    fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            other => return Err(MeshError::Parse(format!("unknown PLY type {other:?}"))),
        })
    }

    fn read(self, r: &mut Cursor<&[u8]>) -> std::io::Result<f64> {
        Ok(match self {
            Self::I8 => f64::from(r.read_i8()?),
            Self::U8 => f64::from(r.read_u8()?),
            Self::I16 => f64::from(r.read_i16::<LittleEndian>()?),
            Self::U16 => f64::from(r.read_u16::<LittleEndian>()?),
            Self::I32 => f64::from(r.read_i32::<LittleEndian>()?),
            Self::U32 => f64::from(r.read_u32::<LittleEndian>()?),
            Self::F32 => f64::from(r.read_f32::<LittleEndian>()?),
            Self::F64 => r.read_f64::<LittleEndian>()?,
        })
    }
}

#[derive(Debug)]
enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

enum PlyBody<'a> {
    Ascii(std::str::SplitAsciiWhitespace<'a>),
    Binary(Cursor<&'a [u8]>),
}

impl PlyBody<'_> {
    fn next(&mut self, ty: Scalar) -> Result<f64> {
        match self {
            PlyBody::Ascii(toks) => toks
                .next()
                .ok_or_else(|| MeshError::Parse("unexpected end of PLY body".into()))?
                .parse()
                .map_err(|e| MeshError::Parse(format!("PLY body: {e}"))),
            PlyBody::Binary(cur) => ty
                .read(cur)
                .map_err(|_| MeshError::Parse("unexpected end of PLY body".into())),
        }
    }
}

pub fn parse_ply(bytes: &[u8]) -> Result<TriangleMesh> {
    const END: &[u8] = b"end_header";
    let end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| MeshError::Parse("PLY header has no end_header".into()))?;
    let mut body_start = end + END.len();
    while body_start < bytes.len() && bytes[body_start] != b'\n' {
        body_start += 1;
    }
    body_start += 1;
    let header = std::str::from_utf8(&bytes[..end]).map_err(|e| MeshError::Parse(e.to_string()))?;

    let mut lines = header.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(MeshError::Parse("missing PLY magic".into()));
    }
    let mut binary = None;
    let mut elements: Vec<Element> = Vec::new();
    for line in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "ascii", _] => binary = Some(false),
            ["format", "binary_little_endian", _] => binary = Some(true),
            ["format", other, _] => {
                return Err(MeshError::Parse(format!("unsupported PLY format {other}")))
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|e| MeshError::Parse(format!("element count: {e}")))?,
                properties: Vec::new(),
            }),
            ["property", "list", count_ty, item_ty, name] => elements
                .last_mut()
                .ok_or_else(|| MeshError::Parse("property before element".into()))?
                .properties
                .push(Property::List(name.to_string(), Scalar::parse(count_ty)?, Scalar::parse(item_ty)?)),
            ["property", ty, name] => elements
                .last_mut()
                .ok_or_else(|| MeshError::Parse("property before element".into()))?
                .properties
                .push(Property::Scalar(name.to_string(), Scalar::parse(ty)?)),
            _ => {}
        }
    }
    let binary = binary.ok_or_else(|| MeshError::Parse("PLY header has no format line".into()))?;
    let body_bytes = bytes.get(body_start..).unwrap_or_default();
    let mut body = if binary {
        PlyBody::Binary(Cursor::new(body_bytes))
    } else {
        let text = std::str::from_utf8(body_bytes).map_err(|e| MeshError::Parse(e.to_string()))?;
        PlyBody::Ascii(text.split_ascii_whitespace())
    };

    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for el in &elements {
        for _ in 0..el.count {
            let mut scalars: HashMap<&str, f64> = HashMap::new();
            let mut list: Option<Vec<f64>> = None;
            for prop in &el.properties {
                match prop {
                    Property::Scalar(name, ty) => {
                        scalars.insert(name, body.next(*ty)?);
                    }
                    Property::List(name, count_ty, item_ty) => {
                        let n = body.next(*count_ty)? as usize;
                        let items = (0..n).map(|_| body.next(*item_ty)).collect::<Result<Vec<_>>>()?;
                        if name == "vertex_indices" || name == "vertex_index" {
                            list = Some(items);
                        }
                    }
                }
            }
            match el.name.as_str() {
                "vertex" => {
                    let get = |k: &str| {
                        scalars
                            .get(k)
                            .copied()
                            .ok_or_else(|| MeshError::Parse(format!("vertex lacks property {k}")))
                    };
                    vertices.push(Vec3::new(get("x")?, get("y")?, get("z")?));
                }
                "face" => {
                    let idx = list.ok_or_else(|| MeshError::Parse("face lacks vertex_indices".into()))?;
                    if idx.len() != 3 {
                        return Err(MeshError::Parse(format!(
                            "only triangles are supported, got {} indices",
                            idx.len()
                        )));
                    }
                    if idx.iter().any(|&i| i < 0.0) {
                        return Err(MeshError::Validation("negative face index".into()));
                    }
                    faces.push([idx[0] as usize, idx[1] as usize, idx[2] as usize]);
                }
                _ => {}
            }
        }
    }
    TriangleMesh::new(vertices, faces)
}

/// Binary STL; identical corner positions are welded into shared vertices in
/// order of first appearance.
pub fn parse_stl(bytes: &[u8]) -> Result<TriangleMesh> {
    if bytes.len() < 84 {
        return Err(MeshError::Parse("STL shorter than its header".into()));
    }
    let mut cur = Cursor::new(&bytes[80..]);
    let count = cur.read_u32::<LittleEndian>()? as usize;
    if bytes.len() < 84 + count * 50 {
        return Err(MeshError::Parse(format!("STL declares {count} triangles but is truncated")));
    }
    let mut index: HashMap<[u32; 3], usize> = HashMap::new();
    let mut vertices = Vec::new();
    let mut faces = Vec::with_capacity(count);
    let mut rec = [0u8; 50];
    for _ in 0..count {
        cur.read_exact(&mut rec)?;
        let mut r = Cursor::new(&rec[12..48]);
        let mut face = [0usize; 3];
        for slot in &mut face {
            let p = [
                r.read_f32::<LittleEndian>()?,
                r.read_f32::<LittleEndian>()?,
                r.read_f32::<LittleEndian>()?,
            ];
            let key = p.map(f32::to_bits);
            *slot = *index.entry(key).or_insert_with(|| {
                vertices.push(Vec3::new(f64::from(p[0]), f64::from(p[1]), f64::from(p[2])));
                vertices.len() - 1
            });
        }
        faces.push(face);
    }
    TriangleMesh::new(vertices, faces)
}

/// OBJ text with 9 significant digits per coordinate and 1-based indices.
pub fn obj_string(mesh: &TriangleMesh) -> String {
    let mut out = String::with_capacity(mesh.vertex_count() * 48 + mesh.face_count() * 24);
    for v in mesh.vertices() {
        let _ = writeln!(out, "v {:.8e} {:.8e} {:.8e}", v.x, v.y, v.z);
    }
    for f in mesh.faces() {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    out
}

pub fn save_obj(mesh: &TriangleMesh, path: &Path) -> Result<()> {
    std::fs::write(path, obj_string(mesh))?;
    Ok(())
}

pub fn stl_bytes(mesh: &TriangleMesh) -> Vec<u8> {
    let mut out = vec![0u8; 80];
    out.write_u32::<LittleEndian>(mesh.face_count() as u32).unwrap();
    for f in 0..mesh.face_count() {
        let n = mesh.face_normal(f).unwrap_or_else(|_| Vec3::zeros());
        for c in n.iter() {
            out.write_f32::<LittleEndian>(*c as f32).unwrap();
        }
        for p in mesh.triangle(f) {
            for c in p.iter() {
                out.write_f32::<LittleEndian>(*c as f32).unwrap();
            }
        }
        out.write_u16::<LittleEndian>(0).unwrap();
    }
    out
}
