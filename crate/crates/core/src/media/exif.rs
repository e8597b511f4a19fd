//! Minimal TIFF/EXIF reader plus in-place GPS removal.
//!
//! Works on JPEG (APP1 `Exif\0\0` segment) and bare TIFF containers. Only the
//! tags needed for the audit summary are decoded; every IFD entry is counted.

use std::collections::HashSet;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use super::MediaError;
use crate::model::Coordinates;

const TAG_MAKE: u16 = 0x010F;
const TAG_MODEL: u16 = 0x0110;
const TAG_DATETIME: u16 = 0x0132;
const TAG_EXIF_IFD: u16 = 0x8769;
const TAG_GPS_IFD: u16 = 0x8825;
const TAG_DATETIME_ORIGINAL: u16 = 0x9003;

const GPS_LATITUDE_REF: u16 = 0x0001;
const GPS_LATITUDE: u16 = 0x0002;
const GPS_LONGITUDE_REF: u16 = 0x0003;
const GPS_LONGITUDE: u16 = 0x0004;

const EXIF_HEADER: &[u8] = b"Exif\0\0";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExifSummary {
    pub gps: Option<Coordinates>,
    /// True when a GPS IFD exists, even if its coordinates were unusable.
    #[serde(default)]
    pub gps_ifd_present: bool,
    pub timestamp: Option<NaiveDateTime>,
    pub camera_make: Option<String>,
    pub camera_model: Option<String>,
    pub raw_tag_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hemisphere {
    N,
    S,
    E,
    W,
}

impl Hemisphere {
    pub fn from_ref(r: &str) -> Option<Hemisphere> {
        match r.trim().to_ascii_uppercase().as_str() {
            "N" => Some(Hemisphere::N),
            "S" => Some(Hemisphere::S),
            "E" => Some(Hemisphere::E),
            "W" => Some(Hemisphere::W),
            _ => None,
        }
    }
}

/// Degrees/minutes/seconds to signed decimal degrees.
pub fn dms_to_decimal(deg: f64, min: f64, sec: f64, hemisphere: Hemisphere) -> Result<f64, MediaError> {
    let ok = deg.is_finite()
        && deg >= 0.0
        && (0.0..60.0).contains(&min)
        && (0.0..60.0).contains(&sec);
    if !ok {
        return Err(MediaError::OutOfRange(format!(
            "invalid DMS ({deg}, {min}, {sec})"
        )));
    }
    let value = deg + min / 60.0 + sec / 3600.0;
    let limit = match hemisphere {
        Hemisphere::N | Hemisphere::S => 90.0,
        Hemisphere::E | Hemisphere::W => 180.0,
    };
    if value > limit {
        return Err(MediaError::OutOfRange(format!("{value} exceeds {limit} degrees")));
    }
    Ok(match hemisphere {
        Hemisphere::S | Hemisphere::W => -value,
        Hemisphere::N | Hemisphere::E => value,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ByteOrder {
    Little,
    Big,
}

/// Byte view over a TIFF structure.
struct Tiff<'a> {
    data: &'a [u8],
    order: ByteOrder,
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    tag: u16,
    kind: u16,
    count: u32,
    /// Offset of the 4-byte value/offset field within the TIFF data.
    field_pos: usize,
}

fn type_size(kind: u16) -> Option<usize> {
    match kind {
        1 | 2 | 6 | 7 => Some(1),
        3 | 8 => Some(2),
        4 | 9 | 11 => Some(4),
        5 | 10 | 12 => Some(8),
        _ => None,
    }
}

impl<'a> Tiff<'a> {
    fn parse(data: &'a [u8]) -> Result<Self, MediaError> {
        if data.len() < 8 {
            return Err(MediaError::Malformed("TIFF header truncated".into()));
        }
        let order = match &data[0..4] {
            [b'I', b'I', 42, 0] => ByteOrder::Little,
            [b'M', b'M', 0, 42] => ByteOrder::Big,
            _ => return Err(MediaError::Malformed("bad TIFF magic".into())),
        };
        Ok(Tiff { data, order })
    }

    fn u16_at(&self, pos: usize) -> Option<u16> {
        let b: [u8; 2] = self.data.get(pos..pos + 2)?.try_into().ok()?;
        Some(match self.order {
            ByteOrder::Little => u16::from_le_bytes(b),
            ByteOrder::Big => u16::from_be_bytes(b),
        })
    }

    fn u32_at(&self, pos: usize) -> Option<u32> {
        let b: [u8; 4] = self.data.get(pos..pos + 4)?.try_into().ok()?;
        Some(match self.order {
            ByteOrder::Little => u32::from_le_bytes(b),
            ByteOrder::Big => u32::from_be_bytes(b),
        })
    }

    fn first_ifd(&self) -> usize {
        self.u32_at(4).unwrap_or(0) as usize
    }

    /// Entries of the IFD at `offset` and the position of its next-IFD link.
    fn ifd(&self, offset: usize) -> Result<(Vec<Entry>, usize), MediaError> {
        let count = self
            .u16_at(offset)
            .ok_or_else(|| MediaError::Malformed(format!("IFD at {offset} out of bounds")))?
            as usize;
        let end = offset + 2 + count * 12;
        if end + 4 > self.data.len() {
            return Err(MediaError::Malformed(format!(
                "IFD at {offset} truncated ({count} entries)"
            )));
        }
        let entries = (0..count)
            .map(|i| {
                let p = offset + 2 + i * 12;
                Entry {
                    tag: self.u16_at(p).unwrap(),
                    kind: self.u16_at(p + 2).unwrap(),
                    count: self.u32_at(p + 4).unwrap(),
                    field_pos: p + 8,
                }
            })
            .collect();
        Ok((entries, end))
    }

    /// Byte range of an entry's value, `None` if it points outside the data.
    fn value_range(&self, e: &Entry) -> Option<(usize, usize)> {
        let len = type_size(e.kind)?.checked_mul(e.count as usize)?;
        let start = if len <= 4 {
            e.field_pos
        } else {
            self.u32_at(e.field_pos)? as usize
        };
        let end = start.checked_add(len)?;
        (end <= self.data.len()).then_some((start, end))
    }

    fn ascii(&self, e: &Entry) -> Option<String> {
        if e.kind != 2 {
            return None;
        }
        let (s, t) = self.value_range(e)?;
        let raw = &self.data[s..t];
        let raw = raw.split(|b| *b == 0).next().unwrap_or(raw);
        let text = String::from_utf8_lossy(raw).trim().to_string();
        (!text.is_empty()).then_some(text)
    }

    fn rationals(&self, e: &Entry) -> Option<Vec<f64>> {
        if e.kind != 5 {
            return None;
        }
        let (s, _) = self.value_range(e)?;
        (0..e.count as usize)
            .map(|i| {
                let num = self.u32_at(s + i * 8)?;
                let den = self.u32_at(s + i * 8 + 4)?;
                (den != 0).then(|| num as f64 / den as f64)
            })
            .collect()
    }

    fn offset_value(&self, e: &Entry) -> Option<usize> {
        match e.kind {
            4 | 13 => self.u32_at(e.field_pos).map(|v| v as usize),
            _ => None,
        }
    }
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    NaiveDateTime::parse_from_str(s.trim(), "%Y:%m:%d %H:%M:%S").ok()
}

fn gps_from_ifd(tiff: &Tiff<'_>, entries: &[Entry]) -> Option<Coordinates> {
    let find = |tag: u16| entries.iter().find(|e| e.tag == tag);
    let lat_ref = Hemisphere::from_ref(&tiff.ascii(find(GPS_LATITUDE_REF)?)?)?;
    let lon_ref = Hemisphere::from_ref(&tiff.ascii(find(GPS_LONGITUDE_REF)?)?)?;
    if !matches!(lat_ref, Hemisphere::N | Hemisphere::S)
        || !matches!(lon_ref, Hemisphere::E | Hemisphere::W)
    {
        return None;
    }
    let lat = tiff.rationals(find(GPS_LATITUDE)?)?;
    let lon = tiff.rationals(find(GPS_LONGITUDE)?)?;
    if lat.len() != 3 || lon.len() != 3 {
        return None;
    }
    let lat = dms_to_decimal(lat[0], lat[1], lat[2], lat_ref).ok()?;
    let lon = dms_to_decimal(lon[0], lon[1], lon[2], lon_ref).ok()?;
    Coordinates::new(lat, lon).ok()
}

fn summarize_tiff(data: &[u8]) -> Result<ExifSummary, MediaError> {
    let tiff = Tiff::parse(data)?;
    let mut summary = ExifSummary::default();
    let mut visited = HashSet::new();
    let mut sub_ifds: Vec<(u16, usize)> = Vec::new();
    let mut datetime = None;
    let mut datetime_original = None;

    // IFD0 and the chain after it.
    let mut next = tiff.first_ifd();
    while next != 0 && visited.insert(next) {
        let (entries, link) = tiff.ifd(next)?;
        summary.raw_tag_count += entries.len();
        for e in &entries {
            match e.tag {
                TAG_MAKE => summary.camera_make = summary.camera_make.take().or(tiff.ascii(e)),
                TAG_MODEL => summary.camera_model = summary.camera_model.take().or(tiff.ascii(e)),
                TAG_DATETIME => datetime = datetime.or(tiff.ascii(e)),
                TAG_EXIF_IFD | TAG_GPS_IFD => {
                    if let Some(off) = tiff.offset_value(e) {
                        sub_ifds.push((e.tag, off));
                    }
                }
                _ => {}
            }
        }
        next = tiff.u32_at(link).unwrap_or(0) as usize;
    }

    for (tag, off) in sub_ifds {
        if !visited.insert(off) {
            continue;
        }
        let (entries, _) = tiff.ifd(off)?;
        summary.raw_tag_count += entries.len();
        if tag == TAG_GPS_IFD {
            summary.gps_ifd_present = true;
            summary.gps = gps_from_ifd(&tiff, &entries);
        } else if let Some(e) = entries.iter().find(|e| e.tag == TAG_DATETIME_ORIGINAL) {
            datetime_original = tiff.ascii(e);
        }
    }

    summary.timestamp = datetime_original
        .as_deref()
        .and_then(parse_timestamp)
        .or_else(|| datetime.as_deref().and_then(parse_timestamp));
    Ok(summary)
}

/// Container kinds understood by the EXIF functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Container {
    Jpeg,
    Tiff,
}

fn container_of(bytes: &[u8]) -> Result<Container, MediaError> {
    if bytes.starts_with(&[0xFF, 0xD8]) {
        Ok(Container::Jpeg)
    } else if bytes.starts_with(b"II*\0") || bytes.starts_with(b"MM\0*") {
        Ok(Container::Tiff)
    } else {
        Err(MediaError::Malformed(
            "not a JPEG or TIFF container".into(),
        ))
    }
}

/// Byte range of the TIFF payload inside a JPEG's EXIF APP1 segment.
fn jpeg_exif_range(bytes: &[u8]) -> Result<Option<(usize, usize)>, MediaError> {
    let mut pos = 2;
    loop {
        // Skip fill bytes.
        while bytes.get(pos) == Some(&0xFF) && bytes.get(pos + 1) == Some(&0xFF) {
            pos += 1;
        }
        let (Some(&0xFF), Some(&marker)) = (bytes.get(pos), bytes.get(pos + 1)) else {
            return if pos >= bytes.len() {
                Ok(None)
            } else {
                Err(MediaError::Malformed(format!("expected JPEG marker at {pos}")))
            };
        };
        match marker {
            0xD9 | 0xDA => return Ok(None),
            0x01 | 0xD0..=0xD7 => {
                pos += 2;
                continue;
            }
            _ => {}
        }
        let len = bytes
            .get(pos + 2..pos + 4)
            .map(|b| u16::from_be_bytes([b[0], b[1]]) as usize)
            .ok_or_else(|| MediaError::Malformed("JPEG segment header truncated".into()))?;
        let body = pos + 4;
        let end = pos + 2 + len;
        if len < 2 || end > bytes.len() {
            return Err(MediaError::Malformed(format!(
                "JPEG segment 0x{marker:02X} truncated"
            )));
        }
        if marker == 0xE1 && bytes[body..end].starts_with(EXIF_HEADER) {
            return Ok(Some((body + EXIF_HEADER.len(), end)));
        }
        pos = end;
    }
}

/// Reads the EXIF summary of a JPEG or TIFF file.
///
/// Images without EXIF yield an empty summary; malformed GPS values yield
/// `gps: None` rather than an error.
pub fn read_exif(image: &[u8]) -> Result<ExifSummary, MediaError> {
    match container_of(image)? {
        Container::Tiff => summarize_tiff(image),
        Container::Jpeg => match jpeg_exif_range(image)? {
            Some((s, e)) => summarize_tiff(&image[s..e]),
            None => Ok(ExifSummary::default()),
        },
    }
}

/// Removes the GPS IFD from an EXIF structure in place.
///
/// The IFD0 pointer entry is deleted and the GPS IFD (table and out-of-line
/// values) is zeroed. Every other byte keeps its position, so strip offsets
/// and the JPEG scan stay valid.
fn strip_gps_tiff(data: &mut [u8]) -> Result<bool, MediaError> {
    let (ifd0, entries, link, gps_off) = {
        let tiff = Tiff::parse(data)?;
        let ifd0 = tiff.first_ifd();
        if ifd0 == 0 {
            return Ok(false);
        }
        let (entries, link) = tiff.ifd(ifd0)?;
        let gps_off = entries
            .iter()
            .find(|e| e.tag == TAG_GPS_IFD)
            .and_then(|e| tiff.offset_value(e));
        (ifd0, entries, link, gps_off)
    };
    let Some(pointer_idx) = entries.iter().position(|e| e.tag == TAG_GPS_IFD) else {
        return Ok(false);
    };

    if let Some(gps_off) = gps_off {
        let ranges = {
            let tiff = Tiff::parse(data)?;
            match tiff.ifd(gps_off) {
                Ok((gps_entries, gps_link)) => {
                    let mut r: Vec<(usize, usize)> = gps_entries
                        .iter()
                        .filter_map(|e| tiff.value_range(e))
                        .collect();
                    r.push((gps_off, gps_link + 4));
                    r
                }
                Err(_) => Vec::new(),
            }
        };
        for (s, e) in ranges {
            // never touch the header or IFD0 itself
            if s >= 8 && !(s < link + 4 && e > ifd0) {
                data[s..e].fill(0);
            }
        }
    }

    let order = Tiff::parse(data)?.order;
    let count = entries.len();
    let entry_start = ifd0 + 2 + pointer_idx * 12;
    let table_end = ifd0 + 2 + count * 12;
    data.copy_within(entry_start + 12..table_end + 4, entry_start);
    let new_count = (count - 1) as u16;
    let count_bytes = match order {
        ByteOrder::Little => new_count.to_le_bytes(),
        ByteOrder::Big => new_count.to_be_bytes(),
    };
    data[ifd0..ifd0 + 2].copy_from_slice(&count_bytes);
    data[table_end - 8..table_end + 4].fill(0);
    Ok(true)
}

/// Returns a copy of the image with its GPS metadata removed.
///
/// Idempotent; images without GPS come back byte-identical.
pub fn strip_gps(image: &[u8]) -> Result<Vec<u8>, MediaError> {
    let mut out = image.to_vec();
    match container_of(image)? {
        Container::Tiff => {
            strip_gps_tiff(&mut out)?;
        }
        Container::Jpeg => {
            if let Some((s, e)) = jpeg_exif_range(image)? {
                strip_gps_tiff(&mut out[s..e])?;
            }
        }
    }
    Ok(out)
}
