//! Client side of the feature-service wire protocol.
//!
//! Every message is a frame:
//!
//! ```text
//! "SRLV" | version u8 (1) | type u8 | payload_len u32 LE | payload
//! ```
//!
//! Payload layouts (all integers and floats little-endian):
//!
//! | type | name          | payload                                                    |
//! |------|---------------|------------------------------------------------------------|
//! | 1    | handshake     | client: empty; server: dim u32, name_len u16, name         |
//! | 2    | feature-req   | id u32, width u32, height u32, RGB8 pixels row-major       |
//! | 3    | feature-resp  | id u32, dim u32, dim x f32, has_label u8 [, len u16, label, confidence f32] |
//! | 4    | classify-req  | same as feature-req; the response carries a label          |
//! | 5    | error         | code u16, len u16, UTF-8 message                           |

use std::io::{BufReader, BufWriter, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use image::RgbImage;

use crate::features::{BackboneDescriptor, FeatureError, FeatureExtractor, FeatureVector};
use crate::geometry::BoundingBox;

pub const MAGIC: &[u8; 4] = b"SRLV";
pub const PROTOCOL_VERSION: u8 = 1;
pub const MAX_PAYLOAD: usize = 16 * 1024 * 1024;
const FRAME_HEADER: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum FrameType {
    Handshake = 1,
    FeatureRequest = 2,
    FeatureResponse = 3,
    ClassifyRequest = 4,
    Error = 5,
}

impl FrameType {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            1 => FrameType::Handshake,
            2 => FrameType::FeatureRequest,
            3 => FrameType::FeatureResponse,
            4 => FrameType::ClassifyRequest,
            5 => FrameType::Error,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub kind: FrameType,
    pub payload: Vec<u8>,
}

fn protocol(msg: impl Into<String>) -> FeatureError {
    FeatureError::Protocol(msg.into())
}

fn io(e: std::io::Error) -> FeatureError {
    FeatureError::ServiceUnavailable(e.to_string())
}

pub fn encode_frame(kind: FrameType, payload: &[u8]) -> Result<Vec<u8>, FeatureError> {
    if payload.len() > MAX_PAYLOAD {
        return Err(protocol(format!("payload of {} bytes exceeds 16 MiB", payload.len())));
    }
    let mut out = Vec::with_capacity(FRAME_HEADER + payload.len());
    out.extend_from_slice(MAGIC);
    out.push(PROTOCOL_VERSION);
    out.push(kind as u8);
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(payload);
    Ok(out)
}

pub fn write_frame<W: Write>(w: &mut W, kind: FrameType, payload: &[u8]) -> Result<(), FeatureError> {
    w.write_all(&encode_frame(kind, payload)?).map_err(io)?;
    w.flush().map_err(io)
}

pub fn read_frame<R: Read>(r: &mut R) -> Result<Frame, FeatureError> {
    let mut header = [0u8; FRAME_HEADER];
    r.read_exact(&mut header).map_err(io)?;
    if &header[..4] != MAGIC {
        return Err(protocol(format!("bad magic {:02x?}", &header[..4])));
    }
    if header[4] != PROTOCOL_VERSION {
        return Err(FeatureError::ProtocolVersionMismatch(header[4]));
    }
    let kind = FrameType::from_u8(header[5]).ok_or_else(|| protocol(format!("unknown frame type {}", header[5])))?;
    let len = u32::from_le_bytes(header[6..10].try_into().expect("4 bytes")) as usize;
    if len > MAX_PAYLOAD {
        return Err(protocol(format!("payload of {len} bytes exceeds 16 MiB")));
    }
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload).map_err(io)?;
    Ok(Frame { kind, payload })
}

/// Sequential reader over a payload.
pub struct Cursor<'a> {
    buf: &'a [u8],
}

impl<'a> Cursor<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf }
    }

    pub fn bytes(&mut self, n: usize) -> Result<&'a [u8], FeatureError> {
        if self.buf.len() < n {
            return Err(protocol("payload shorter than its declared fields"));
        }
        let (a, b) = self.buf.split_at(n);
        self.buf = b;
        Ok(a)
    }

    pub fn u8(&mut self) -> Result<u8, FeatureError> {
        Ok(self.bytes(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, FeatureError> {
        Ok(u16::from_le_bytes(self.bytes(2)?.try_into().expect("2 bytes")))
    }

    pub fn u32(&mut self) -> Result<u32, FeatureError> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().expect("4 bytes")))
    }

    pub fn f32(&mut self) -> Result<f32, FeatureError> {
        Ok(f32::from_le_bytes(self.bytes(4)?.try_into().expect("4 bytes")))
    }

    pub fn string(&mut self, n: usize) -> Result<String, FeatureError> {
        String::from_utf8(self.bytes(n)?.to_vec()).map_err(|_| protocol("string field is not UTF-8"))
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }
}

pub fn encode_handshake_reply(backbone: &BackboneDescriptor) -> Vec<u8> {
    let mut p = Vec::new();
    p.extend_from_slice(&(backbone.dim as u32).to_le_bytes());
    p.extend_from_slice(&(backbone.name.len() as u16).to_le_bytes());
    p.extend_from_slice(backbone.name.as_bytes());
    p
}

pub fn decode_handshake_reply(payload: &[u8]) -> Result<BackboneDescriptor, FeatureError> {
    let mut c = Cursor::new(payload);
    let dim = c.u32()? as usize;
    let n = c.u16()? as usize;
    let name = c.string(n)?;
    Ok(BackboneDescriptor { name, dim })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRequest {
    pub id: u32,
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl FeatureRequest {
    pub fn encode(&self) -> Vec<u8> {
        let mut p = Vec::with_capacity(12 + self.pixels.len());
        p.extend_from_slice(&self.id.to_le_bytes());
        p.extend_from_slice(&self.width.to_le_bytes());
        p.extend_from_slice(&self.height.to_le_bytes());
        p.extend_from_slice(&self.pixels);
        p
    }

    pub fn decode(payload: &[u8]) -> Result<Self, FeatureError> {
        let mut c = Cursor::new(payload);
        let id = c.u32()?;
        let width = c.u32()?;
        let height = c.u32()?;
        let expected = width as usize * height as usize * 3;
        let pixels = c.bytes(expected)?.to_vec();
        if !c.is_empty() {
            return Err(protocol("pixel payload longer than width*height*3"));
        }
        Ok(Self {
            id,
            width,
            height,
            pixels,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureResponse {
    pub id: u32,
    pub features: Vec<f32>,
    pub label: Option<(String, f32)>,
}

impl FeatureResponse {
    pub fn encode(&self) -> Vec<u8> {
        let mut p = Vec::with_capacity(9 + 4 * self.features.len());
        p.extend_from_slice(&self.id.to_le_bytes());
        p.extend_from_slice(&(self.features.len() as u32).to_le_bytes());
        for v in &self.features {
            p.extend_from_slice(&v.to_le_bytes());
        }
        match &self.label {
            Some((name, conf)) => {
                p.push(1);
                p.extend_from_slice(&(name.len() as u16).to_le_bytes());
                p.extend_from_slice(name.as_bytes());
                p.extend_from_slice(&conf.to_le_bytes());
            }
            None => p.push(0),
        }
        p
    }

    pub fn decode(payload: &[u8]) -> Result<Self, FeatureError> {
        let mut c = Cursor::new(payload);
        let id = c.u32()?;
        let dim = c.u32()? as usize;
        let mut features = Vec::with_capacity(dim);
        for _ in 0..dim {
            features.push(c.f32()?);
        }
        let label = match c.u8()? {
            0 => None,
            1 => {
                let n = c.u16()? as usize;
                let name = c.string(n)?;
                Some((name, c.f32()?))
            }
            other => return Err(protocol(format!("label flag {other}"))),
        };
        if !c.is_empty() {
            return Err(protocol("trailing bytes in feature response"));
        }
        Ok(Self { id, features, label })
    }
}

pub fn encode_error(code: u16, message: &str) -> Vec<u8> {
    let msg = &message.as_bytes()[..message.len().min(u16::MAX as usize)];
    let mut p = Vec::with_capacity(4 + msg.len());
    p.extend_from_slice(&code.to_le_bytes());
    p.extend_from_slice(&(msg.len() as u16).to_le_bytes());
    p.extend_from_slice(msg);
    p
}

pub fn decode_error(payload: &[u8]) -> FeatureError {
    let mut c = Cursor::new(payload);
    let parsed = (|| {
        let code = c.u16()?;
        let n = c.u16()? as usize;
        Ok::<_, FeatureError>((code, String::from_utf8_lossy(c.bytes(n)?).into_owned()))
    })();
    match parsed {
        Ok((code, message)) => FeatureError::Remote { code, message },
        Err(_) => protocol("unreadable error frame"),
    }
}

/// Extracts features by sending the cropped region to a running service.
#[derive(Debug)]
pub struct ExternalExtractor {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    descriptor: BackboneDescriptor,
    next_id: u32,
}

impl ExternalExtractor {
    /// Connects and performs the handshake. With `expected_dim` set, a
    /// service announcing a different width is rejected.
    pub fn connect<A: ToSocketAddrs>(addr: A, expected_dim: Option<usize>) -> Result<Self, FeatureError> {
        let stream = TcpStream::connect(addr).map_err(io)?;
        stream.set_nodelay(true).map_err(io)?;
        stream.set_read_timeout(Some(Duration::from_secs(60))).map_err(io)?;
        let mut reader = BufReader::new(stream.try_clone().map_err(io)?);
        let mut writer = BufWriter::new(stream);
        write_frame(&mut writer, FrameType::Handshake, &[])?;
        let reply = read_frame(&mut reader)?;
        let descriptor = match reply.kind {
            FrameType::Handshake => decode_handshake_reply(&reply.payload)?,
            FrameType::Error => return Err(decode_error(&reply.payload)),
            other => return Err(protocol(format!("expected handshake, got {other:?}"))),
        };
        if let Some(dim) = expected_dim {
            if dim != descriptor.dim {
                return Err(FeatureError::DimensionMismatch {
                    expected: dim,
                    actual: descriptor.dim,
                });
            }
        }
        Ok(Self {
            reader,
            writer,
            descriptor,
            next_id: 0,
        })
    }

    fn request(&mut self, image: &RgbImage, region: &BoundingBox, kind: FrameType) -> Result<FeatureResponse, FeatureError> {
        let (x0, y0, x1, y1) = region.to_pixel_rect(image.width(), image.height());
        if x1 <= x0 || y1 <= y0 {
            return Err(FeatureError::RegionCropFailure(*region));
        }
        let crop = image::imageops::crop_imm(image, x0, y0, x1 - x0, y1 - y0).to_image();
        let id = self.next_id;
        self.next_id = self.next_id.wrapping_add(1);
        let req = FeatureRequest {
            id,
            width: crop.width(),
            height: crop.height(),
            pixels: crop.into_raw(),
        };
        write_frame(&mut self.writer, kind, &req.encode())?;
        let frame = read_frame(&mut self.reader)?;
        let resp = match frame.kind {
            FrameType::FeatureResponse => FeatureResponse::decode(&frame.payload)?,
            FrameType::Error => return Err(decode_error(&frame.payload)),
            other => return Err(protocol(format!("expected feature response, got {other:?}"))),
        };
        if resp.id != id {
            return Err(protocol(format!("response id {} for request {id}", resp.id)));
        }
        if resp.features.len() != self.descriptor.dim {
            return Err(FeatureError::DimensionMismatch {
                expected: self.descriptor.dim,
                actual: resp.features.len(),
            });
        }
        if resp.features.iter().any(|v| !v.is_finite()) {
            return Err(protocol("non-finite feature value"));
        }
        Ok(resp)
    }

    /// Features plus the service's top-1 label and confidence.
    pub fn classify(
        &mut self,
        image: &RgbImage,
        region: &BoundingBox,
    ) -> Result<(FeatureVector, Option<(String, f32)>), FeatureError> {
        let resp = self.request(image, region, FrameType::ClassifyRequest)?;
        Ok((FeatureVector(resp.features), resp.label))
    }
}

impl FeatureExtractor for ExternalExtractor {
    fn descriptor(&self) -> &BackboneDescriptor {
        &self.descriptor
    }

    fn extract(&mut self, image: &RgbImage, region: &BoundingBox) -> Result<FeatureVector, FeatureError> {
        Ok(FeatureVector(self.request(image, region, FrameType::FeatureRequest)?.features))
    }
}
