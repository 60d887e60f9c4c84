//! PLY 1.0 reader and writer for colored, sensor-labeled vertices.
//!
//! The reader accepts `ascii`, `binary_little_endian` and `binary_big_endian`
//! files. The `vertex` element must carry `x`, `y`, `z` and `red`, `green`, `blue`;
//! `sensor_id` is optional and defaults to 0. Other properties and elements are
//! skipped. The writer always emits `x y z` as float, colors and `sensor_id` as uchar.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{FrameError, Point, PointCloudFrame};
use crate::Vec3f;

#[derive(Debug, thiserror::Error)]
pub enum PlyError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("malformed header at line {line}: {reason}")]
    MalformedHeader { line: usize, reason: String },
    #[error("missing property `{property}` in element `{element}`")]
    MissingProperty { element: String, property: String },
    #[error("missing element `{0}`")]
    MissingElement(String),
    #[error("truncated payload in element `{element}` at item {index}")]
    Truncated { element: String, index: usize },
    #[error("invalid value for `{property}` in element `{element}` at item {index}")]
    BadValue {
        element: String,
        index: usize,
        property: String,
    },
    #[error("invalid point data: {0}")]
    InvalidPoint(#[from] FrameError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Ascii,
    BinaryLe,
    BinaryBe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn decode(self, b: &[u8], fmt: Format) -> f64 {
        macro_rules! num {
            ($t:ty, $n:expr) => {{
                let arr: [u8; $n] = b[..$n].try_into().unwrap();
                (if fmt == Format::BinaryBe {
                    <$t>::from_be_bytes(arr)
                } else {
                    <$t>::from_le_bytes(arr)
                }) as f64
            }};
        }
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => num!(i16, 2),
            Self::U16 => num!(u16, 2),
            Self::I32 => num!(i32, 4),
            Self::U32 => num!(u32, 4),
            Self::F32 => num!(f32, 4),
            Self::F64 => num!(f64, 8),
        }
    }
}

#[derive(Debug, Clone)]
enum PropertyKind {
    Scalar(ScalarType),
    List { count: ScalarType, item: ScalarType },
}

#[derive(Debug, Clone)]
struct Property {
    name: String,
    kind: PropertyKind,
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

struct Header {
    format: Format,
    elements: Vec<Element>,
}

fn header_err(line: usize, reason: impl Into<String>) -> PlyError {
    PlyError::MalformedHeader {
        line,
        reason: reason.into(),
    }
}

fn read_header<R: BufRead>(reader: &mut R) -> Result<Header, PlyError> {
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut line_no = 0;
    let mut buf = String::new();
    loop {
        buf.clear();
        if reader.read_line(&mut buf)? == 0 {
            return Err(header_err(line_no + 1, "unexpected end of file before end_header"));
        }
        line_no += 1;
        let line = buf.trim_end_matches(['\n', '\r']);
        let mut tokens = line.split_whitespace();
        let keyword = tokens.next();
        if line_no == 1 {
            if line.trim() != "ply" {
                return Err(header_err(1, "missing `ply` magic"));
            }
            continue;
        }
        match keyword {
            None | Some("comment") | Some("obj_info") => {}
            Some("format") => {
                let f = match tokens.next() {
                    Some("ascii") => Format::Ascii,
                    Some("binary_little_endian") => Format::BinaryLe,
                    Some("binary_big_endian") => Format::BinaryBe,
                    other => {
                        return Err(header_err(line_no, format!("unknown format {other:?}")));
                    }
                };
                if tokens.next() != Some("1.0") {
                    return Err(header_err(line_no, "unsupported format version"));
                }
                format = Some(f);
            }
            Some("element") => {
                let name = tokens
                    .next()
                    .ok_or_else(|| header_err(line_no, "element without name"))?;
                let count = tokens
                    .next()
                    .and_then(|c| c.parse::<usize>().ok())
                    .ok_or_else(|| header_err(line_no, "element count is not an integer"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| header_err(line_no, "property before any element"))?;
                let ty = tokens
                    .next()
                    .ok_or_else(|| header_err(line_no, "property without type"))?;
                let kind = if ty == "list" {
                    let count = tokens.next().and_then(ScalarType::parse);
                    let item = tokens.next().and_then(ScalarType::parse);
                    match (count, item) {
                        (Some(count), Some(item)) => PropertyKind::List { count, item },
                        _ => return Err(header_err(line_no, "bad list property types")),
                    }
                } else {
                    PropertyKind::Scalar(
                        ScalarType::parse(ty)
                            .ok_or_else(|| header_err(line_no, format!("unknown type `{ty}`")))?,
                    )
                };
                let name = tokens
                    .next()
                    .ok_or_else(|| header_err(line_no, "property without name"))?;
                element.properties.push(Property {
                    name: name.to_string(),
                    kind,
                });
            }
            Some("end_header") => break,
            Some(other) => return Err(header_err(line_no, format!("unexpected keyword `{other}`"))),
        }
    }
    let format = format.ok_or_else(|| header_err(line_no, "no format line"))?;
    Ok(Header { format, elements })
}

/// Positions of the vertex properties we care about.
struct VertexLayout {
    xyz: [usize; 3],
    rgb: [usize; 3],
    sensor: Option<usize>,
}

impl VertexLayout {
    fn resolve(element: &Element) -> Result<Self, PlyError> {
        let find = |name: &str| element.properties.iter().position(|p| p.name == name);
        let require = |name: &str| {
            let idx = find(name).ok_or_else(|| PlyError::MissingProperty {
                element: element.name.clone(),
                property: name.to_string(),
            })?;
            match element.properties[idx].kind {
                PropertyKind::Scalar(_) => Ok(idx),
                PropertyKind::List { .. } => Err(PlyError::BadValue {
                    element: element.name.clone(),
                    index: 0,
                    property: name.to_string(),
                }),
            }
        };
        Ok(Self {
            xyz: [require("x")?, require("y")?, require("z")?],
            rgb: [require("red")?, require("green")?, require("blue")?],
            sensor: find("sensor_id"),
        })
    }

    fn point(&self, values: &[f64], element: &str, index: usize) -> Result<Point, PlyError> {
        let color = |i: usize, prop: &str| {
            let v = values[i];
            if (0.0..=255.0).contains(&v) && v.fract() == 0.0 {
                Ok(v as u8)
            } else {
                Err(PlyError::BadValue {
                    element: element.to_string(),
                    index,
                    property: prop.to_string(),
                })
            }
        };
        let sensor_id = match self.sensor {
            Some(i) => color(i, "sensor_id")?,
            None => 0,
        };
        Ok(Point {
            position: Vec3f::new(
                values[self.xyz[0]] as f32,
                values[self.xyz[1]] as f32,
                values[self.xyz[2]] as f32,
            ),
            color: [
                color(self.rgb[0], "red")?,
                color(self.rgb[1], "green")?,
                color(self.rgb[2], "blue")?,
            ],
            sensor_id,
        })
    }
}

fn read_exact_or_truncated<R: Read>(
    reader: &mut R,
    buf: &mut [u8],
    element: &str,
    index: usize,
) -> Result<(), PlyError> {
    reader.read_exact(buf).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            PlyError::Truncated {
                element: element.to_string(),
                index,
            }
        } else {
            PlyError::Io(e)
        }
    })
}

fn read_binary_item<R: Read>(
    reader: &mut R,
    element: &Element,
    index: usize,
    format: Format,
    values: &mut Vec<f64>,
) -> Result<(), PlyError> {
    values.clear();
    let mut scratch = [0u8; 8];
    for prop in &element.properties {
        match prop.kind {
            PropertyKind::Scalar(t) => {
                let b = &mut scratch[..t.size()];
                read_exact_or_truncated(reader, b, &element.name, index)?;
                values.push(t.decode(b, format));
            }
            PropertyKind::List { count, item } => {
                let b = &mut scratch[..count.size()];
                read_exact_or_truncated(reader, b, &element.name, index)?;
                let n = count.decode(b, format);
                if n < 0.0 {
                    return Err(PlyError::BadValue {
                        element: element.name.clone(),
                        index,
                        property: prop.name.clone(),
                    });
                }
                let mut skip = vec![0u8; n as usize * item.size()];
                read_exact_or_truncated(reader, &mut skip, &element.name, index)?;
                values.push(n);
            }
        }
    }
    Ok(())
}

fn read_ascii_item<R: BufRead>(
    reader: &mut R,
    element: &Element,
    index: usize,
    line: &mut String,
    values: &mut Vec<f64>,
) -> Result<(), PlyError> {
    values.clear();
    loop {
        line.clear();
        if reader.read_line(line)? == 0 {
            return Err(PlyError::Truncated {
                element: element.name.clone(),
                index,
            });
        }
        if !line.trim().is_empty() {
            break;
        }
    }
    let mut tokens = line.split_whitespace();
    for prop in &element.properties {
        let mut next = |ty: ScalarType| -> Result<f64, PlyError> {
            let tok = tokens.next().ok_or_else(|| PlyError::Truncated {
                element: element.name.clone(),
                index,
            })?;
            // float32 tokens are parsed directly so the value is the nearest f32.
            let parsed = if ty == ScalarType::F32 {
                tok.parse::<f32>().map(f64::from)
            } else {
                tok.parse::<f64>()
            };
            parsed.map_err(|_| PlyError::BadValue {
                element: element.name.clone(),
                index,
                property: prop.name.clone(),
            })
        };
        match prop.kind {
            PropertyKind::Scalar(t) => values.push(next(t)?),
            PropertyKind::List { count, item } => {
                let n = next(count)?;
                for _ in 0..n.max(0.0) as usize {
                    next(item)?;
                }
                values.push(n);
            }
        }
    }
    Ok(())
}

/// Reads a frame from any PLY source. The frame gets index 0 and timestamp 0.
pub fn read_ply<R: Read>(reader: R) -> Result<PointCloudFrame, PlyError> {
    let mut reader = BufReader::new(reader);
    let header = read_header(&mut reader)?;
    let vertex_pos = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| PlyError::MissingElement("vertex".into()))?;
    let layout = VertexLayout::resolve(&header.elements[vertex_pos])?;

    let mut points = Vec::new();
    let mut values = Vec::new();
    let mut line = String::new();
    for (ei, element) in header.elements.iter().enumerate() {
        if ei > vertex_pos {
            // Trailing elements (faces, ...) are not needed.
            break;
        }
        if ei == vertex_pos {
            points.reserve(element.count);
        }
        for index in 0..element.count {
            match header.format {
                Format::Ascii => read_ascii_item(&mut reader, element, index, &mut line, &mut values)?,
                fmt => read_binary_item(&mut reader, element, index, fmt, &mut values)?,
            }
            if ei == vertex_pos {
                points.push(layout.point(&values, &element.name, index)?);
            }
        }
    }
    Ok(PointCloudFrame::from_points(0, 0.0, points)?)
}

pub fn load_ply(path: impl AsRef<Path>) -> Result<PointCloudFrame, PlyError> {
    read_ply(File::open(path)?)
}

/// Writes a frame; binary output is little-endian.
pub fn write_ply<W: Write>(frame: &PointCloudFrame, writer: W, binary: bool) -> io::Result<()> {
    let mut w = BufWriter::new(writer);
    writeln!(w, "ply")?;
    writeln!(
        w,
        "format {} 1.0",
        if binary { "binary_little_endian" } else { "ascii" }
    )?;
    writeln!(w, "comment frame_index {}", frame.frame_index)?;
    writeln!(w, "element vertex {}", frame.points.len())?;
    for axis in ["x", "y", "z"] {
        writeln!(w, "property float {axis}")?;
    }
    for ch in ["red", "green", "blue", "sensor_id"] {
        writeln!(w, "property uchar {ch}")?;
    }
    writeln!(w, "end_header")?;
    let mut buf = Vec::with_capacity(16);
    for p in &frame.points {
        if binary {
            buf.clear();
            p.write_uncompressed(&mut buf);
            w.write_all(&buf)?;
        } else {
            // `{}` on f32 prints the shortest string that parses back to the same value.
            writeln!(
                w,
                "{} {} {} {} {} {} {}",
                p.position.x, p.position.y, p.position.z, p.color[0], p.color[1], p.color[2], p.sensor_id
            )?;
        }
    }
    w.flush()
}

pub fn emit_ply(frame: &PointCloudFrame, path: impl AsRef<Path>, binary: bool) -> io::Result<()> {
    write_ply(frame, File::create(path)?, binary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &[u8]) -> Result<PointCloudFrame, PlyError> {
        read_ply(s)
    }

    #[test]
    fn single_ascii_point() {
        let src = b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n0 0 0 255 0 0\n";
        let f = parse(src).unwrap();
        assert_eq!(f.points.len(), 1);
        assert_eq!(f.points[0], Point::new(Vec3f::zero(), [255, 0, 0], 0));
        assert_eq!(f.sensor_count, 1);
    }

    #[test]
    fn missing_z_is_named() {
        let src = b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n0 0 255 0 0\n";
        match parse(src).unwrap_err() {
            PlyError::MissingProperty { element, property } => {
                assert_eq!(element, "vertex");
                assert_eq!(property, "z");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn malformed_header() {
        let err = parse(b"ply\nformat ascii 1.0\nelement vertex many\nend_header\n").unwrap_err();
        assert!(matches!(err, PlyError::MalformedHeader { line: 3, .. }));
        let err = parse(b"not a ply\n").unwrap_err();
        assert!(matches!(err, PlyError::MalformedHeader { line: 1, .. }));
        let err = parse(b"ply\nformat ascii 1.0\nelement vertex 0\n").unwrap_err();
        assert!(matches!(err, PlyError::MalformedHeader { .. }));
    }

    #[test]
    fn truncated_binary_names_item() {
        let frame = PointCloudFrame::from_points(
            0,
            0.0,
            (0..4).map(|i| Point::new(Vec3f::splat(i as f32), [1, 2, 3], 0)).collect(),
        )
        .unwrap();
        let mut bytes = Vec::new();
        write_ply(&frame, &mut bytes, true).unwrap();
        bytes.truncate(bytes.len() - 10);
        match parse(&bytes).unwrap_err() {
            PlyError::Truncated { element, index } => {
                assert_eq!(element, "vertex");
                assert_eq!(index, 3);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn truncated_ascii() {
        let src = b"ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n0 0 0 255 0 0\n";
        assert!(matches!(parse(src).unwrap_err(), PlyError::Truncated { index: 1, .. }));
    }

    #[test]
    fn extra_properties_and_faces_are_skipped() {
        let src = b"ply\nformat ascii 1.0\ncomment hi\nelement vertex 2\nproperty double x\nproperty double y\nproperty double z\nproperty float nx\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nproperty uchar alpha\nproperty uchar sensor_id\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n1 2 3 0.5 10 20 30 255 2\n4 5 6 0.5 40 50 60 255 1\n3 0 1 1\n";
        let f = parse(src).unwrap();
        assert_eq!(f.points[1], Point::new(Vec3f::new(4.0, 5.0, 6.0), [40, 50, 60], 1));
        assert_eq!(f.sensor_count, 3);
    }

    #[test]
    fn big_endian_input() {
        let mut src = b"ply\nformat binary_big_endian 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n".to_vec();
        for v in [1.5f32, -2.0, 0.25] {
            src.extend_from_slice(&v.to_be_bytes());
        }
        src.extend_from_slice(&[7, 8, 9]);
        let f = parse(&src).unwrap();
        assert_eq!(f.points[0].position, Vec3f::new(1.5, -2.0, 0.25));
    }

    #[test]
    fn empty_frame_roundtrip() {
        let frame = PointCloudFrame::from_points(0, 0.0, vec![]).unwrap();
        for binary in [true, false] {
            let mut bytes = Vec::new();
            write_ply(&frame, &mut bytes, binary).unwrap();
            let text = String::from_utf8_lossy(&bytes);
            assert!(text.contains("element vertex 0"));
            assert!(parse(&bytes).unwrap().points.is_empty());
        }
    }

    #[test]
    fn color_out_of_range() {
        let src = b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nproperty int red\nproperty uchar green\nproperty uchar blue\nend_header\n0 0 0 300 0 0\n";
        assert!(matches!(parse(src).unwrap_err(), PlyError::BadValue { .. }));
    }
}
