//! Residual traces and their binary on-disk format.
//!
//! A trace stores the raw update residuals of one sampling run as a dense
//! `[step][token][channel]` array of f32 values, plus the id of the model
//! that produced them. Values are kept in f32 to match what a real
//! inference stack would dump; all downstream statistics are computed in
//! f64.

use std::io::{Read, Write};

use thiserror::Error;

/// Magic bytes at the start of every trace file.
pub const TRACE_MAGIC: [u8; 4] = *b"MCTR";

/// Trace format version written and accepted by this crate.
pub const TRACE_VERSION: u32 = 1;

/// Header length in bytes, not counting the variable-length model id.
pub const TRACE_HEADER_LEN: u64 = 28;

const DTYPE_F32_LE: u32 = 0;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("bad magic {found:02x?}, expected {TRACE_MAGIC:02x?}")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported trace version {0}, expected {TRACE_VERSION}")]
    UnsupportedVersion(u32),
    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u32),
    #[error("bad dimensions steps={steps} tokens={tokens} channels={channels}; need steps >= 2, tokens >= 1, channels >= 1")]
    BadDimensions {
        steps: u64,
        tokens: u64,
        channels: u64,
    },
    #[error("dimensions steps={steps} tokens={tokens} channels={channels} overflow the addressable payload size")]
    DimensionOverflow {
        steps: u64,
        tokens: u64,
        channels: u64,
    },
    #[error("data length {got} does not match steps*tokens*channels = {expected}")]
    DataLength { got: usize, expected: usize },
    #[error("truncated file: expected {expected} more bytes in {section}, got {actual}")]
    Truncated {
        section: &'static str,
        expected: u64,
        actual: u64,
    },
    #[error("trailing bytes after declared payload")]
    TrailingBytes,
    #[error("non-finite value at step {step}, token {token}, channel {channel}")]
    NonFinite {
        step: usize,
        token: usize,
        channel: usize,
    },
    #[error("model id is not valid UTF-8")]
    InvalidModelId,
    #[error("i/o failure at byte {position}: {source}")]
    Io {
        position: u64,
        source: std::io::Error,
    },
}

/// Update residuals of a single sampling run.
///
/// Data is laid out row-major as `[num_steps][num_tokens][num_channels]`.
/// Instances are immutable once built, and construction guarantees that
/// every value is finite and the dimensions are consistent.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualTrace {
    num_steps: usize,
    num_tokens: usize,
    num_channels: usize,
    data: Vec<f32>,
    model_id: String,
}

impl ResidualTrace {
    /// Builds a trace from a flat row-major buffer.
    ///
    /// Requires at least two steps (ratios need a predecessor), at least one
    /// token and channel, a buffer of exactly `steps * tokens * channels`
    /// values, and no NaN or infinity anywhere.
    pub fn from_vec(
        model_id: impl Into<String>,
        num_steps: usize,
        num_tokens: usize,
        num_channels: usize,
        data: Vec<f32>,
    ) -> Result<Self, TraceError> {
        if num_steps < 2 || num_tokens < 1 || num_channels < 1 {
            return Err(TraceError::BadDimensions {
                steps: num_steps as u64,
                tokens: num_tokens as u64,
                channels: num_channels as u64,
            });
        }
        let expected = num_steps
            .checked_mul(num_tokens)
            .and_then(|v| v.checked_mul(num_channels))
            .ok_or(TraceError::DimensionOverflow {
                steps: num_steps as u64,
                tokens: num_tokens as u64,
                channels: num_channels as u64,
            })?;
        if data.len() != expected {
            return Err(TraceError::DataLength {
                got: data.len(),
                expected,
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            let step = pos / (num_tokens * num_channels);
            let rem = pos % (num_tokens * num_channels);
            return Err(TraceError::NonFinite {
                step,
                token: rem / num_channels,
                channel: rem % num_channels,
            });
        }
        Ok(Self {
            num_steps,
            num_tokens,
            num_channels,
            data,
            model_id: model_id.into(),
        })
    }

    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    pub fn num_tokens(&self) -> usize {
        self.num_tokens
    }

    pub fn num_channels(&self) -> usize {
        self.num_channels
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    /// Flat row-major view of all residuals.
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// All residuals of one step, `num_tokens * num_channels` long.
    pub fn step(&self, t: usize) -> &[f32] {
        assert!(t < self.num_steps, "step {t} out of range");
        let row = self.num_tokens * self.num_channels;
        &self.data[t * row..(t + 1) * row]
    }

    /// Channel vector of one token at one step.
    pub fn token(&self, t: usize, n: usize) -> &[f32] {
        assert!(n < self.num_tokens, "token {n} out of range");
        let step = self.step(t);
        &step[n * self.num_channels..(n + 1) * self.num_channels]
    }
}

struct CountingWriter<W: Write> {
    inner: W,
    position: u64,
}

impl<W: Write> CountingWriter<W> {
    fn put(&mut self, bytes: &[u8]) -> Result<(), TraceError> {
        self.inner
            .write_all(bytes)
            .map_err(|source| TraceError::Io {
                position: self.position,
                source,
            })?;
        self.position += bytes.len() as u64;
        Ok(())
    }
}

/// Serializes a trace to its binary format.
///
/// Layout: magic, version, steps, tokens, channels, dtype code, model id
/// length, model id bytes, then the payload as little-endian f32 in
/// row-major `[step][token][channel]` order. All integers are u32 little
/// endian. Nothing is written if the trace fails validation.
pub fn write_trace<W: Write>(trace: &ResidualTrace, sink: W) -> Result<(), TraceError> {
    // Re-check what construction already guaranteed so a corrupt file can
    // never be produced even if an invalid instance sneaks in.
    if let Some(pos) = trace.data.iter().position(|v| !v.is_finite()) {
        let row = trace.num_tokens * trace.num_channels;
        return Err(TraceError::NonFinite {
            step: pos / row,
            token: (pos % row) / trace.num_channels,
            channel: pos % trace.num_channels,
        });
    }
    let mut out = CountingWriter {
        inner: sink,
        position: 0,
    };
    out.put(&TRACE_MAGIC)?;
    out.put(&TRACE_VERSION.to_le_bytes())?;
    out.put(&(trace.num_steps as u32).to_le_bytes())?;
    out.put(&(trace.num_tokens as u32).to_le_bytes())?;
    out.put(&(trace.num_channels as u32).to_le_bytes())?;
    out.put(&DTYPE_F32_LE.to_le_bytes())?;
    out.put(&(trace.model_id.len() as u32).to_le_bytes())?;
    out.put(trace.model_id.as_bytes())?;
    let mut payload = Vec::with_capacity(trace.data.len() * 4);
    for v in &trace.data {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    out.put(&payload)?;
    Ok(())
}

/// Reads as much as possible into `buf`, returning how many bytes arrived.
fn read_full<R: Read>(reader: &mut R, buf: &mut [u8], position: u64) -> Result<usize, TraceError> {
    let mut filled = 0;
    while filled < buf.len() {
        match reader.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
            Err(source) => {
                return Err(TraceError::Io {
                    position: position + filled as u64,
                    source,
                })
            }
        }
    }
    Ok(filled)
}

fn read_exactly<R: Read>(
    reader: &mut R,
    buf: &mut [u8],
    section: &'static str,
    position: u64,
) -> Result<(), TraceError> {
    let got = read_full(reader, buf, position)?;
    if got < buf.len() {
        return Err(TraceError::Truncated {
            section,
            expected: buf.len() as u64,
            actual: got as u64,
        });
    }
    Ok(())
}

fn read_u32<R: Read>(
    reader: &mut R,
    section: &'static str,
    position: u64,
) -> Result<u32, TraceError> {
    let mut buf = [0u8; 4];
    read_exactly(reader, &mut buf, section, position)?;
    Ok(u32::from_le_bytes(buf))
}

/// Parses a trace file, validating header, payload length and finiteness.
///
/// The source must contain exactly one trace: any bytes left over after the
/// declared payload are an error, as is a payload that ends early.
pub fn read_trace<R: Read>(mut source: R) -> Result<ResidualTrace, TraceError> {
    let mut magic = [0u8; 4];
    read_exactly(&mut source, &mut magic, "magic", 0)?;
    if magic != TRACE_MAGIC {
        return Err(TraceError::BadMagic { found: magic });
    }
    let version = read_u32(&mut source, "version", 4)?;
    if version != TRACE_VERSION {
        return Err(TraceError::UnsupportedVersion(version));
    }
    let steps = read_u32(&mut source, "dimensions", 8)? as u64;
    let tokens = read_u32(&mut source, "dimensions", 12)? as u64;
    let channels = read_u32(&mut source, "dimensions", 16)? as u64;
    let dtype = read_u32(&mut source, "dtype", 20)?;
    if dtype != DTYPE_F32_LE {
        return Err(TraceError::UnsupportedDtype(dtype));
    }
    if steps < 2 || tokens < 1 || channels < 1 {
        return Err(TraceError::BadDimensions {
            steps,
            tokens,
            channels,
        });
    }
    let count = steps
        .checked_mul(tokens)
        .and_then(|v| v.checked_mul(channels))
        .filter(|&v| v <= usize::MAX as u64 / 4)
        .ok_or(TraceError::DimensionOverflow {
            steps,
            tokens,
            channels,
        })? as usize;

    let name_len = read_u32(&mut source, "model id length", 24)? as usize;
    let mut name_buf = vec![0u8; name_len];
    read_exactly(&mut source, &mut name_buf, "model id", TRACE_HEADER_LEN)?;
    let model_id = String::from_utf8(name_buf).map_err(|_| TraceError::InvalidModelId)?;

    let payload_start = TRACE_HEADER_LEN + name_len as u64;
    let mut payload = vec![0u8; count * 4];
    let got = read_full(&mut source, &mut payload, payload_start)?;
    if got < payload.len() {
        return Err(TraceError::Truncated {
            section: "payload",
            expected: payload.len() as u64,
            actual: got as u64,
        });
    }
    let mut probe = [0u8; 1];
    if read_full(&mut source, &mut probe, payload_start + got as u64)? != 0 {
        return Err(TraceError::TrailingBytes);
    }

    let mut data = Vec::with_capacity(count);
    for chunk in payload.chunks_exact(4) {
        data.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
    }
    ResidualTrace::from_vec(
        model_id,
        steps as usize,
        tokens as usize,
        channels as usize,
        data,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample_trace(seed: u64, steps: usize, tokens: usize, channels: usize) -> ResidualTrace {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f32> = (0..steps * tokens * channels)
            .map(|_| rng.random_range(-2.0f32..2.0))
            .collect();
        ResidualTrace::from_vec("test-model", steps, tokens, channels, data).unwrap()
    }

    fn to_bytes(trace: &ResidualTrace) -> Vec<u8> {
        let mut buf = Vec::new();
        write_trace(trace, &mut buf).unwrap();
        buf
    }

    #[test]
    fn round_trip_is_bitwise_exact() {
        let trace = sample_trace(7, 5, 3, 4);
        let bytes = to_bytes(&trace);
        let back = read_trace(bytes.as_slice()).unwrap();
        assert_eq!(back.num_steps(), 5);
        assert_eq!(back.num_tokens(), 3);
        assert_eq!(back.num_channels(), 4);
        assert_eq!(back.model_id(), "test-model");
        let orig_bits: Vec<u32> = trace.data().iter().map(|v| v.to_bits()).collect();
        let back_bits: Vec<u32> = back.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(orig_bits, back_bits);
    }

    #[test]
    fn file_size_matches_header_plus_payload() {
        let trace = sample_trace(1, 4, 2, 3);
        let bytes = to_bytes(&trace);
        let expected = TRACE_HEADER_LEN as usize + "test-model".len() + 4 * 4 * 2 * 3;
        assert_eq!(bytes.len(), expected);
    }

    #[test]
    fn empty_model_id_round_trips() {
        let data = vec![1.0f32; 2];
        let trace = ResidualTrace::from_vec("", 2, 1, 1, data).unwrap();
        let back = read_trace(to_bytes(&trace).as_slice()).unwrap();
        assert_eq!(back.model_id(), "");
    }

    #[test]
    fn nan_is_rejected_before_any_bytes_leave() {
        let mut data = vec![0.5f32; 2 * 2 * 2];
        data[3] = f32::NAN;
        match ResidualTrace::from_vec("m", 2, 2, 2, data) {
            Err(TraceError::NonFinite {
                step,
                token,
                channel,
            }) => {
                assert_eq!((step, token, channel), (0, 1, 1));
            }
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn infinity_is_rejected() {
        let mut data = vec![0.5f32; 3 * 2];
        data[5] = f32::INFINITY;
        assert!(matches!(
            ResidualTrace::from_vec("m", 3, 1, 2, data),
            Err(TraceError::NonFinite {
                step: 2,
                token: 0,
                channel: 1
            })
        ));
    }

    #[test]
    fn single_step_is_rejected() {
        let err = ResidualTrace::from_vec("m", 1, 2, 2, vec![0.0; 4]).unwrap_err();
        assert!(matches!(err, TraceError::BadDimensions { .. }));
    }

    #[test]
    fn wrong_buffer_length_is_rejected() {
        let err = ResidualTrace::from_vec("m", 2, 2, 2, vec![0.0; 7]).unwrap_err();
        assert!(matches!(
            err,
            TraceError::DataLength {
                got: 7,
                expected: 8
            }
        ));
    }

    #[test]
    fn bad_magic_is_reported() {
        let mut bytes = to_bytes(&sample_trace(2, 2, 1, 1));
        bytes[0] = b'X';
        assert!(matches!(
            read_trace(bytes.as_slice()),
            Err(TraceError::BadMagic { .. })
        ));
    }

    #[test]
    fn future_version_is_rejected() {
        let mut bytes = to_bytes(&sample_trace(3, 2, 1, 1));
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            read_trace(bytes.as_slice()),
            Err(TraceError::UnsupportedVersion(2))
        ));
    }

    #[test]
    fn unknown_dtype_is_rejected() {
        let mut bytes = to_bytes(&sample_trace(4, 2, 1, 1));
        bytes[20..24].copy_from_slice(&1u32.to_le_bytes());
        assert!(matches!(
            read_trace(bytes.as_slice()),
            Err(TraceError::UnsupportedDtype(1))
        ));
    }

    #[test]
    fn truncated_payload_is_reported_with_counts() {
        let bytes = to_bytes(&sample_trace(5, 2, 2, 2));
        let cut = &bytes[..bytes.len() - 5];
        match read_trace(cut) {
            Err(TraceError::Truncated {
                section: "payload",
                expected,
                actual,
            }) => {
                assert_eq!(expected, 2 * 2 * 2 * 4);
                assert_eq!(actual, expected - 5);
            }
            other => panic!("expected Truncated, got {other:?}"),
        }
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let mut bytes = to_bytes(&sample_trace(6, 2, 1, 1));
        bytes.push(0);
        assert!(matches!(
            read_trace(bytes.as_slice()),
            Err(TraceError::TrailingBytes)
        ));
    }

    #[test]
    fn non_finite_payload_is_located() {
        let mut bytes = to_bytes(&sample_trace(8, 3, 2, 2));
        // Corrupt the value at step 1, token 0, channel 1.
        let (step, token, channel) = (1, 0, 1);
        let flat = (step * 2 + token) * 2 + channel;
        let offset = TRACE_HEADER_LEN as usize + "test-model".len() + 4 * flat;
        bytes[offset..offset + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            read_trace(bytes.as_slice()),
            Err(TraceError::NonFinite {
                step: 1,
                token: 0,
                channel: 1
            })
        ));
    }

    #[test]
    fn zero_token_header_is_rejected() {
        let mut bytes = to_bytes(&sample_trace(9, 2, 1, 1));
        bytes[12..16].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(
            read_trace(bytes.as_slice()),
            Err(TraceError::BadDimensions { .. })
        ));
    }

    #[test]
    fn step_and_token_views_agree_with_flat_layout() {
        let trace = sample_trace(10, 4, 3, 2);
        for t in 0..4 {
            for n in 0..3 {
                for c in 0..2 {
                    let flat = trace.data()[(t * 3 + n) * 2 + c];
                    assert_eq!(trace.token(t, n)[c], flat);
                    assert_eq!(trace.step(t)[n * 2 + c], flat);
                }
            }
        }
    }
}
