//! PLY point cloud files with the attribute set used by the calibration:
//! `x y z` plus optional `intensity`, `nx ny nz`, `planarity`.
//!
//! Both ASCII and binary little-endian files are read; writing defaults to
//! binary little-endian (bit-exact across runs). Unknown properties and
//! non-vertex elements are skipped. Parse errors name the offending line
//! (ASCII/header) or byte offset (binary).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use calibkit::Vector3;

use calibkit::PointCloud;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
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
    fn parse(token: &str) -> Option<ScalarType> {
        Some(match token {
            "char" | "int8" => ScalarType::I8,
            "uchar" | "uint8" => ScalarType::U8,
            "short" | "int16" => ScalarType::I16,
            "ushort" | "uint16" => ScalarType::U16,
            "int" | "int32" => ScalarType::I32,
            "uint" | "uint32" => ScalarType::U32,
            "float" | "float32" => ScalarType::F32,
            "double" | "float64" => ScalarType::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            ScalarType::I8 | ScalarType::U8 => 1,
            ScalarType::I16 | ScalarType::U16 => 2,
            ScalarType::I32 | ScalarType::U32 => 4,
            ScalarType::F32 => 4,
            ScalarType::F64 => 8,
        }
    }

    fn read_le<R: Read>(self, r: &mut R) -> std::io::Result<f64> {
        Ok(match self {
            ScalarType::I8 => r.read_i8()? as f64,
            ScalarType::U8 => r.read_u8()? as f64,
            ScalarType::I16 => r.read_i16::<LittleEndian>()? as f64,
            ScalarType::U16 => r.read_u16::<LittleEndian>()? as f64,
            ScalarType::I32 => r.read_i32::<LittleEndian>()? as f64,
            ScalarType::U32 => r.read_u32::<LittleEndian>()? as f64,
            ScalarType::F32 => r.read_f32::<LittleEndian>()? as f64,
            ScalarType::F64 => r.read_f64::<LittleEndian>()?,
        })
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: ScalarType },
    List { count_ty: ScalarType, item_ty: ScalarType },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

struct Header {
    format: PlyFormat,
    elements: Vec<Element>,
    frame_id: Option<String>,
    data_start_line: usize,
}

fn read_header<R: BufRead>(reader: &mut R, path: &Path) -> Result<Header> {
    let mut line = String::new();
    let mut line_no = 0usize;
    let mut next_line = |reader: &mut R, line: &mut String| -> Result<usize> {
        line.clear();
        let n = reader.read_line(line)?;
        line_no += 1;
        if n == 0 {
            bail!("{}: line {line_no}: unexpected end of header", path.display());
        }
        Ok(line_no)
    };

    next_line(reader, &mut line)?;
    if line.trim_end() != "ply" {
        bail!("{}: line 1: not a PLY file (missing 'ply' magic)", path.display());
    }

    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut frame_id = None;
    loop {
        let n = next_line(reader, &mut line)?;
        let trimmed = line.trim_end();
        let mut tokens = trimmed.split_whitespace();
        match tokens.next() {
            Some("format") => {
                format = Some(match tokens.next() {
                    Some("ascii") => PlyFormat::Ascii,
                    Some("binary_little_endian") => PlyFormat::BinaryLittleEndian,
                    Some(other) => {
                        bail!("{}: line {n}: unsupported format '{other}'", path.display())
                    }
                    None => bail!("{}: line {n}: malformed format line", path.display()),
                });
            }
            Some("comment") => {
                let rest = trimmed.strip_prefix("comment").unwrap_or("").trim();
                if let Some(id) = rest.strip_prefix("frame_id=") {
                    frame_id = Some(id.trim().to_string());
                }
            }
            Some("element") => {
                let name = tokens
                    .next()
                    .ok_or_else(|| anyhow!("{}: line {n}: element without name", path.display()))?;
                let count: usize = tokens
                    .next()
                    .ok_or_else(|| anyhow!("{}: line {n}: element without count", path.display()))?
                    .parse()
                    .with_context(|| format!("{}: line {n}: bad element count", path.display()))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let element = elements.last_mut().ok_or_else(|| {
                    anyhow!("{}: line {n}: property before any element", path.display())
                })?;
                let first = tokens
                    .next()
                    .ok_or_else(|| anyhow!("{}: line {n}: malformed property", path.display()))?;
                if first == "list" {
                    let count_ty = tokens.next().and_then(ScalarType::parse).ok_or_else(|| {
                        anyhow!("{}: line {n}: bad list count type", path.display())
                    })?;
                    let item_ty = tokens.next().and_then(ScalarType::parse).ok_or_else(|| {
                        anyhow!("{}: line {n}: bad list item type", path.display())
                    })?;
                    element.properties.push(Property::List { count_ty, item_ty });
                } else {
                    let ty = ScalarType::parse(first).ok_or_else(|| {
                        anyhow!("{}: line {n}: unknown property type '{first}'", path.display())
                    })?;
                    let name = tokens
                        .next()
                        .ok_or_else(|| anyhow!("{}: line {n}: property without name", path.display()))?;
                    element.properties.push(Property::Scalar {
                        name: name.to_string(),
                        ty,
                    });
                }
            }
            Some("end_header") => {
                let format = format.ok_or_else(|| {
                    anyhow!("{}: line {n}: end_header before format", path.display())
                })?;
                return Ok(Header {
                    format,
                    elements,
                    frame_id,
                    data_start_line: n,
                });
            }
            Some("obj_info") | None => {}
            Some(other) => {
                bail!("{}: line {n}: unknown header keyword '{other}'", path.display())
            }
        }
    }
}

struct VertexLayout {
    x: usize,
    y: usize,
    z: usize,
    intensity: Option<usize>,
    nx: Option<usize>,
    ny: Option<usize>,
    nz: Option<usize>,
    planarity: Option<usize>,
}

fn vertex_layout(element: &Element, path: &Path) -> Result<VertexLayout> {
    let find = |wanted: &str| -> Option<usize> {
        element.properties.iter().position(|p| match p {
            Property::Scalar { name, .. } => name == wanted,
            Property::List { .. } => false,
        })
    };
    let x = find("x");
    let y = find("y");
    let z = find("z");
    match (x, y, z) {
        (Some(x), Some(y), Some(z)) => Ok(VertexLayout {
            x,
            y,
            z,
            intensity: find("intensity"),
            nx: find("nx"),
            ny: find("ny"),
            nz: find("nz"),
            planarity: find("planarity"),
        }),
        _ => bail!(
            "{}: vertex element lacks x/y/z properties",
            path.display()
        ),
    }
}

/// Read a point cloud. The frame id comes from a `comment frame_id=...`
/// header line, else from the file stem.
pub fn read_ply(path: &Path) -> Result<PointCloud> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut reader = BufReader::new(file);
    let header = read_header(&mut reader, path)?;

    let mut positions = Vec::new();
    let mut intensities = Vec::new();
    let mut normals_raw = Vec::new();
    let mut planarities = Vec::new();
    let mut layout: Option<VertexLayout> = None;

    let mut line_no = header.data_start_line;
    let mut byte_offset = 0usize;
    for element in &header.elements {
        if element.name == "vertex" {
            let lay = vertex_layout(element, path)?;
            let has_normals = lay.nx.is_some() || lay.ny.is_some() || lay.nz.is_some();
            if has_normals && (lay.nx.is_none() || lay.ny.is_none() || lay.nz.is_none()) {
                bail!("{}: normals need all of nx, ny, nz", path.display());
            }
            positions.reserve(element.count);
            match header.format {
                PlyFormat::Ascii => {
                    let mut line = String::new();
                    for _ in 0..element.count {
                        line.clear();
                        line_no += 1;
                        if reader.read_line(&mut line)? == 0 {
                            bail!(
                                "{}: line {line_no}: unexpected end of file in vertex data",
                                path.display()
                            );
                        }
                        let values: Vec<f64> = line
                            .split_whitespace()
                            .map(|t| {
                                t.parse::<f64>().with_context(|| {
                                    format!(
                                        "{}: line {line_no}: bad number '{t}'",
                                        path.display()
                                    )
                                })
                            })
                            .collect::<Result<_>>()?;
                        if values.len() < element.properties.len() {
                            bail!(
                                "{}: line {line_no}: expected {} values, found {}",
                                path.display(),
                                element.properties.len(),
                                values.len()
                            );
                        }
                        collect_vertex(&values, &lay, &mut positions, &mut intensities, &mut normals_raw, &mut planarities)
                            .map_err(|e| anyhow!("{}: line {line_no}: {e}", path.display()))?;
                    }
                }
                PlyFormat::BinaryLittleEndian => {
                    let mut values = vec![0.0f64; element.properties.len()];
                    for _ in 0..element.count {
                        for (slot, prop) in values.iter_mut().zip(&element.properties) {
                            match prop {
                                Property::Scalar { ty, .. } => {
                                    *slot = ty.read_le(&mut reader).with_context(|| {
                                        format!(
                                            "{}: byte offset {byte_offset}: truncated vertex data",
                                            path.display()
                                        )
                                    })?;
                                    byte_offset += ty.size();
                                }
                                Property::List { .. } => {
                                    bail!(
                                        "{}: vertex element with list property is not supported",
                                        path.display()
                                    );
                                }
                            }
                        }
                        collect_vertex(&values, &lay, &mut positions, &mut intensities, &mut normals_raw, &mut planarities)
                            .map_err(|e| anyhow!("{}: byte offset {byte_offset}: {e}", path.display()))?;
                    }
                }
            }
            layout = Some(lay);
        } else {
            // skip foreign elements
            skip_element(&mut reader, element, header.format, &mut line_no, &mut byte_offset)
                .with_context(|| {
                    format!("{}: skipping element '{}'", path.display(), element.name)
                })?;
        }
    }
    let layout = layout.ok_or_else(|| anyhow!("{}: no vertex element", path.display()))?;

    let frame_id = header
        .frame_id
        .or_else(|| path.file_stem().map(|s| s.to_string_lossy().to_string()))
        .unwrap_or_else(|| "unknown".to_string());
    let mut cloud = PointCloud::from_positions(positions, frame_id);
    if layout.intensity.is_some() {
        cloud = cloud
            .with_intensities(intensities)
            .map_err(|e| anyhow!("{}: {e}", path.display()))?;
    }
    if layout.nx.is_some() {
        let normals: Vec<Vector3<f64>> = normals_raw
            .iter()
            .map(|n: &Vector3<f64>| {
                let norm = n.norm();
                if norm == 0.0 {
                    Err(anyhow!("{}: zero-length normal", path.display()))
                } else {
                    Ok(n / norm)
                }
            })
            .collect::<Result<_>>()?;
        let planarities = if layout.planarity.is_some() {
            planarities.clone()
        } else {
            vec![0.0; cloud.len()]
        };
        cloud = cloud
            .with_normals_planarity(normals, planarities)
            .map_err(|e| anyhow!("{}: {e}", path.display()))?;
    } else if layout.planarity.is_some() {
        bail!(
            "{}: planarity without normals is not supported",
            path.display()
        );
    }
    Ok(cloud)
}

fn collect_vertex(
    values: &[f64],
    lay: &VertexLayout,
    positions: &mut Vec<Vector3<f64>>,
    intensities: &mut Vec<f64>,
    normals: &mut Vec<Vector3<f64>>,
    planarities: &mut Vec<f64>,
) -> std::result::Result<(), String> {
    let p = Vector3::new(values[lay.x], values[lay.y], values[lay.z]);
    if !p.iter().all(|v| v.is_finite()) {
        return Err(format!("non-finite position {p:?}"));
    }
    positions.push(p);
    if let Some(i) = lay.intensity {
        intensities.push(values[i]);
    }
    if let (Some(ix), Some(iy), Some(iz)) = (lay.nx, lay.ny, lay.nz) {
        normals.push(Vector3::new(values[ix], values[iy], values[iz]));
    }
    if let Some(i) = lay.planarity {
        planarities.push(values[i].clamp(0.0, 1.0));
    }
    Ok(())
}

fn skip_element<R: BufRead>(
    reader: &mut R,
    element: &Element,
    format: PlyFormat,
    line_no: &mut usize,
    byte_offset: &mut usize,
) -> Result<()> {
    match format {
        PlyFormat::Ascii => {
            let mut line = String::new();
            for _ in 0..element.count {
                line.clear();
                *line_no += 1;
                if reader.read_line(&mut line)? == 0 {
                    bail!("line {line_no}: unexpected end of file");
                }
            }
        }
        PlyFormat::BinaryLittleEndian => {
            for _ in 0..element.count {
                for prop in &element.properties {
                    match prop {
                        Property::Scalar { ty, .. } => {
                            let mut buf = vec![0u8; ty.size()];
                            reader.read_exact(&mut buf)?;
                            *byte_offset += ty.size();
                        }
                        Property::List { count_ty, item_ty } => {
                            let count = count_ty.read_le(reader)? as usize;
                            *byte_offset += count_ty.size();
                            let mut buf = vec![0u8; item_ty.size() * count];
                            reader.read_exact(&mut buf)?;
                            *byte_offset += buf.len();
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

/// Write a cloud with all its attributes as double-precision properties.
pub fn write_ply(path: &Path, cloud: &PointCloud, format: PlyFormat) -> Result<()> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    let mut w = BufWriter::new(file);
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    write!(w, "ply\nformat {fmt} 1.0\n")?;
    writeln!(w, "comment frame_id={}", cloud.frame_id())?;
    writeln!(w, "element vertex {}", cloud.len())?;
    writeln!(w, "property double x\nproperty double y\nproperty double z")?;
    if cloud.has_intensity() {
        writeln!(w, "property double intensity")?;
    }
    if cloud.has_normals() {
        writeln!(w, "property double nx\nproperty double ny\nproperty double nz")?;
    }
    if cloud.has_planarity() {
        writeln!(w, "property double planarity")?;
    }
    writeln!(w, "end_header")?;

    for i in 0..cloud.len() {
        let p = cloud.positions()[i];
        let mut row = vec![p.x, p.y, p.z];
        if let Some(ints) = cloud.intensities() {
            row.push(ints[i]);
        }
        if let Some(normals) = cloud.normals() {
            row.extend_from_slice(&[normals[i].x, normals[i].y, normals[i].z]);
        }
        if let Some(planarities) = cloud.planarities() {
            row.push(planarities[i]);
        }
        match format {
            PlyFormat::Ascii => {
                let mut first = true;
                for v in row {
                    if !first {
                        write!(w, " ")?;
                    }
                    write!(w, "{v}")?;
                    first = false;
                }
                writeln!(w)?;
            }
            PlyFormat::BinaryLittleEndian => {
                for v in row {
                    w.write_f64::<LittleEndian>(v)?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}
