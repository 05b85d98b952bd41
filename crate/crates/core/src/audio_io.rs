//! Mono WAV input/output and the in-memory [`Waveform`] type.
//!
//! Reads 16-bit PCM, 24-bit PCM and 32-bit IEEE float RIFF/WAVE files with a
//! single channel. Writes 16-bit PCM or 32-bit float. Samples are kept as
//! `f32`; reads never clamp, so values outside [-1, 1] survive a float32 round
//! trip.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    /// Validating constructor: rejects a zero sample rate and non-finite samples.
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Format(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|&s| (s as f64) * (s as f64)).sum()
    }

    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            0.0
        } else {
            self.energy() / self.samples.len() as f64
        }
    }

    pub(crate) fn with_samples(&self, samples: Vec<f32>) -> Self {
        Self {
            samples,
            sample_rate: self.sample_rate,
        }
    }

    pub(crate) fn from_f64(samples: &[f64], sample_rate: u32) -> Self {
        Self {
            samples: samples.iter().map(|&s| s as f32).collect(),
            sample_rate,
        }
    }

    pub(crate) fn to_f64(&self) -> Vec<f64> {
        self.samples.iter().map(|&s| s as f64).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoding {
    Pcm16,
    Float32,
}

impl std::str::FromStr for Encoding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pcm16" => Ok(Encoding::Pcm16),
            "float32" => Ok(Encoding::Float32),
            other => Err(Error::Config(format!("unknown encoding {other:?}"))),
        }
    }
}

const WAVE_FORMAT_PCM: u16 = 1;
const WAVE_FORMAT_IEEE_FLOAT: u16 = 3;
const WAVE_FORMAT_EXTENSIBLE: u16 = 0xFFFE;

/// Largest value a 16-bit PCM sample can represent.
pub const PCM16_MAX: f32 = 1.0 - 1.0 / 32768.0;

fn u16_at(b: &[u8], off: usize) -> u16 {
    u16::from_le_bytes([b[off], b[off + 1]])
}

fn u32_at(b: &[u8], off: usize) -> u32 {
    u32::from_le_bytes([b[off], b[off + 1], b[off + 2], b[off + 3]])
}

struct FmtChunk {
    format: u16,
    channels: u16,
    sample_rate: u32,
    bits: u16,
}

fn parse_fmt(body: &[u8]) -> Result<FmtChunk> {
    if body.len() < 16 {
        return Err(Error::CorruptFile(format!(
            "fmt chunk is {} bytes, expected at least 16",
            body.len()
        )));
    }
    let mut format = u16_at(body, 0);
    let channels = u16_at(body, 2);
    let sample_rate = u32_at(body, 4);
    let bits = u16_at(body, 14);
    if format == WAVE_FORMAT_EXTENSIBLE {
        // cbSize(2) validBits(2) channelMask(4) then the subformat GUID whose
        // first two bytes carry the plain format tag.
        if body.len() < 26 {
            return Err(Error::CorruptFile("truncated WAVE_FORMAT_EXTENSIBLE".into()));
        }
        format = u16_at(body, 24);
    }
    Ok(FmtChunk {
        format,
        channels,
        sample_rate,
        bits,
    })
}

/// Decode a complete RIFF/WAVE byte buffer.
pub fn decode_wav(bytes: &[u8]) -> Result<Waveform> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::Format("not a RIFF/WAVE file".into()));
    }
    let mut fmt: Option<FmtChunk> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        if id == b"data" {
            let fmt = fmt.ok_or_else(|| Error::CorruptFile("data chunk before fmt chunk".into()))?;
            let available = bytes.len() - body_start;
            if size > available {
                return Err(Error::CorruptFile(format!(
                    "data chunk declares {size} bytes but only {available} remain"
                )));
            }
            return decode_samples(&fmt, &bytes[body_start..body_start + size]);
        }
        let body_end = body_start
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::CorruptFile(format!("chunk {:?} overruns file", String::from_utf8_lossy(id))))?;
        if id == b"fmt " {
            let parsed = parse_fmt(&bytes[body_start..body_end])?;
            if parsed.channels != 1 {
                return Err(Error::Channel(parsed.channels));
            }
            fmt = Some(parsed);
        }
        // chunks are word aligned
        pos = body_end + (size & 1);
    }
    Err(Error::CorruptFile("missing data chunk".into()))
}

fn decode_samples(fmt: &FmtChunk, data: &[u8]) -> Result<Waveform> {
    if fmt.sample_rate == 0 {
        return Err(Error::CorruptFile("sample rate 0 in header".into()));
    }
    let samples: Vec<f32> = match (fmt.format, fmt.bits) {
        (WAVE_FORMAT_PCM, 16) => {
            check_aligned(data, 2)?;
            data.chunks_exact(2)
                .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32 / 32768.0)
                .collect()
        }
        (WAVE_FORMAT_PCM, 24) => {
            check_aligned(data, 3)?;
            data.chunks_exact(3)
                .map(|c| {
                    let v = i32::from_le_bytes([0, c[0], c[1], c[2]]) >> 8;
                    v as f32 / 8_388_608.0
                })
                .collect()
        }
        (WAVE_FORMAT_IEEE_FLOAT, 32) => {
            check_aligned(data, 4)?;
            data.chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect()
        }
        (format, bits) => {
            return Err(Error::Format(format!(
                "format tag {format} with {bits} bits per sample"
            )))
        }
    };
    Waveform::new(samples, fmt.sample_rate).map_err(|e| match e {
        Error::Format(msg) => Error::CorruptFile(msg),
        other => other,
    })
}

fn check_aligned(data: &[u8], width: usize) -> Result<()> {
    if data.len() % width != 0 {
        return Err(Error::CorruptFile(format!(
            "data chunk of {} bytes is not a whole number of {width}-byte samples",
            data.len()
        )));
    }
    Ok(())
}

/// Encode a waveform as a complete RIFF/WAVE byte buffer.
///
/// `Pcm16` clamps to `[-1, 1 - 2^-15]` and rounds to the nearest step.
/// `Float32` writes an 18-byte fmt chunk plus a `fact` chunk as required for
/// non-PCM data.
pub fn encode_wav(wave: &Waveform, encoding: Encoding) -> Vec<u8> {
    let n = wave.samples.len();
    let (format, bits, fmt_len): (u16, u16, u32) = match encoding {
        Encoding::Pcm16 => (WAVE_FORMAT_PCM, 16, 16),
        Encoding::Float32 => (WAVE_FORMAT_IEEE_FLOAT, 32, 18),
    };
    let block_align = bits / 8;
    let data_len = (n * block_align as usize) as u32;
    let fact_len: u32 = if encoding == Encoding::Float32 { 12 } else { 0 };
    let riff_len = 4 + (8 + fmt_len) + fact_len + (8 + data_len) + (data_len & 1);

    let mut out = Vec::with_capacity(riff_len as usize + 8);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&riff_len.to_le_bytes());
    out.extend_from_slice(b"WAVE");

    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&fmt_len.to_le_bytes());
    out.extend_from_slice(&format.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&wave.sample_rate.to_le_bytes());
    out.extend_from_slice(&(wave.sample_rate * block_align as u32).to_le_bytes());
    out.extend_from_slice(&block_align.to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    if fmt_len == 18 {
        out.extend_from_slice(&0u16.to_le_bytes());
    }
    if fact_len > 0 {
        out.extend_from_slice(b"fact");
        out.extend_from_slice(&4u32.to_le_bytes());
        out.extend_from_slice(&(n as u32).to_le_bytes());
    }

    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    match encoding {
        Encoding::Pcm16 => {
            for &s in &wave.samples {
                let v = (s.clamp(-1.0, PCM16_MAX) * 32768.0).round() as i16;
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Encoding::Float32 => {
            for &s in &wave.samples {
                out.extend_from_slice(&s.to_le_bytes());
            }
        }
    }
    if data_len & 1 == 1 {
        out.push(0);
    }
    out
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes)
}

pub fn write_wav(wave: &Waveform, path: impl AsRef<Path>, encoding: Encoding) -> Result<()> {
    write_atomic(path.as_ref(), &encode_wav(wave, encoding))
}

/// Write through a temporary file in the destination directory and rename it
/// into place, so readers never observe a partially written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.flush().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
