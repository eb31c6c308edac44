//! Length-prefixed binary framing for protocol messages and click dumps.
//!
//! Every frame is `len: u16 LE` followed by `len` bytes: a one-byte tag and the
//! payload. All integers are little-endian.
//!
//! | tag  | message         | payload                                                        |
//! |------|-----------------|----------------------------------------------------------------|
//! | 0x01 | `Announcement`  | `round_id: u64`, `i: u16`, `j: u16`                            |
//! | 0x02 | `SiftedRecord`  | `round_id: u64`, `i: u16`, `j: u16`, `alice: u8`, `bob: u8`, `d: u16` |
//! | 0x03 | `ClickRecord`   | `round_id: u64`, `d: u16`, `n: u16`, then `n` × (`slot: u16`, `detector: u8`) |

use super::{Announcement, SiftedRecord};
use crate::error::{Error, Result};
use crate::photonics::{Click, ClickRecord};

const TAG_ANNOUNCEMENT: u8 = 0x01;
const TAG_SIFTED: u8 = 0x02;
const TAG_CLICKS: u8 = 0x03;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Frame {
    Announcement(Announcement),
    Sifted(SiftedRecord),
    Clicks(ClickRecord),
}

fn narrow(value: u32, what: &str) -> Result<u16> {
    u16::try_from(value).map_err(|_| Error::Codec(format!("{what} {value} does not fit in 16 bits")))
}

impl Frame {
    /// Appends the framed message to `out`.
    pub fn encode(&self, out: &mut Vec<u8>) -> Result<()> {
        let mut body = Vec::with_capacity(32);
        match self {
            Frame::Announcement(a) => {
                body.push(TAG_ANNOUNCEMENT);
                body.extend_from_slice(&a.round_id.to_le_bytes());
                body.extend_from_slice(&a.i.to_le_bytes());
                body.extend_from_slice(&a.j.to_le_bytes());
            }
            Frame::Sifted(s) => {
                body.push(TAG_SIFTED);
                body.extend_from_slice(&s.round_id.to_le_bytes());
                body.extend_from_slice(&s.i.to_le_bytes());
                body.extend_from_slice(&s.j.to_le_bytes());
                body.push(s.alice_bit);
                body.push(s.bob_bit);
                body.extend_from_slice(&narrow(s.d, "delay")?.to_le_bytes());
            }
            Frame::Clicks(c) => {
                body.push(TAG_CLICKS);
                body.extend_from_slice(&c.round_id.to_le_bytes());
                body.extend_from_slice(&narrow(c.d, "delay")?.to_le_bytes());
                let n = u32::try_from(c.clicks.len()).unwrap_or(u32::MAX);
                body.extend_from_slice(&narrow(n, "click count")?.to_le_bytes());
                for click in &c.clicks {
                    body.extend_from_slice(&narrow(click.slot, "slot")?.to_le_bytes());
                    body.push(click.detector);
                }
            }
        }
        let len = u16::try_from(body.len())
            .map_err(|_| Error::Codec(format!("frame of {} bytes too long", body.len())))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&body);
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.encode(&mut out)?;
        Ok(out)
    }

    /// Decodes one frame from the front of `input`, returning it and the bytes consumed.
    pub fn decode(input: &[u8]) -> Result<(Frame, usize)> {
        let mut r = Reader { buf: input, pos: 0 };
        let len = usize::from(r.u16()?);
        let body = r.take(len)?;
        let mut b = Reader { buf: body, pos: 0 };
        let frame = match b.u8()? {
            TAG_ANNOUNCEMENT => Frame::Announcement(Announcement {
                round_id: b.u64()?,
                i: b.u16()?,
                j: b.u16()?,
            }),
            TAG_SIFTED => Frame::Sifted(SiftedRecord {
                round_id: b.u64()?,
                i: b.u16()?,
                j: b.u16()?,
                alice_bit: b.u8()?,
                bob_bit: b.u8()?,
                d: u32::from(b.u16()?),
            }),
            TAG_CLICKS => {
                let round_id = b.u64()?;
                let d = u32::from(b.u16()?);
                let n = usize::from(b.u16()?);
                let clicks = (0..n)
                    .map(|_| {
                        Ok(Click {
                            slot: u32::from(b.u16()?),
                            detector: b.u8()?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Frame::Clicks(ClickRecord {
                    round_id,
                    d,
                    clicks,
                })
            }
            tag => return Err(Error::Codec(format!("unknown frame tag {tag:#04x}"))),
        };
        if b.pos != body.len() {
            return Err(Error::Codec(format!(
                "{} trailing bytes in frame",
                body.len() - b.pos
            )));
        }
        Ok((frame, r.pos))
    }

    /// Decodes a concatenation of frames.
    pub fn decode_all(mut input: &[u8]) -> Result<Vec<Frame>> {
        let mut frames = Vec::new();
        while !input.is_empty() {
            let (frame, used) = Frame::decode(input)?;
            frames.push(frame);
            input = &input[used..];
        }
        Ok(frames)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        let slice = self
            .buf
            .get(self.pos..end)
            .ok_or_else(|| Error::Codec(format!("truncated frame: wanted {n} bytes at {}", self.pos)))?;
        self.pos = end;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
