use std::io::{Read, Write};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"PFTG";
const VERSION: u16 = 1;

/// Detection times of one detector channel, in picoseconds, non-decreasing.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TagStream {
    pub channel_id: u16,
    tags: Vec<u64>,
}

impl TagStream {
    /// Wraps `tags`, rejecting unsorted input.
    pub fn new(channel_id: u16, tags: Vec<u64>) -> Result<Self> {
        check_sorted(channel_id, &tags)?;
        Ok(Self { channel_id, tags })
    }

    /// Sorts `tags` first; used by producers that merge out-of-order events.
    pub fn from_unsorted(channel_id: u16, mut tags: Vec<u64>) -> Self {
        tags.sort_unstable();
        Self { channel_id, tags }
    }

    /// Wraps `tags` without checking order. Consumers still validate, so this
    /// only exists to exercise those checks.
    #[doc(hidden)]
    pub fn from_raw_unchecked(channel_id: u16, tags: Vec<u64>) -> Self {
        Self { channel_id, tags }
    }

    pub fn tags(&self) -> &[u64] {
        &self.tags
    }

    pub fn into_tags(self) -> Vec<u64> {
        self.tags
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    /// Little-endian `PFTG` container: magic, version u16, channel u16,
    /// count u64, then `count` u64 timestamps.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let mut buf = Vec::with_capacity(16 + 8 * self.tags.len());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&self.channel_id.to_le_bytes());
        buf.extend_from_slice(&(self.tags.len() as u64).to_le_bytes());
        for t in &self.tags {
            buf.extend_from_slice(&t.to_le_bytes());
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let mut header = [0u8; 16];
        input.read_exact(&mut header)?;
        if &header[0..4] != MAGIC {
            return Err(Error::Format("not a PFTG tag stream".into()));
        }
        let version = u16::from_le_bytes([header[4], header[5]]);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported tag stream version {version}")));
        }
        let channel_id = u16::from_le_bytes([header[6], header[7]]);
        let count = u64::from_le_bytes(header[8..16].try_into().expect("8 bytes"));
        let mut body = Vec::new();
        input.read_to_end(&mut body)?;
        if body.len() as u64 != count * 8 {
            return Err(Error::Format(format!(
                "tag stream declares {count} tags but holds {} bytes",
                body.len()
            )));
        }
        let tags = body
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Self::new(channel_id, tags)
    }
}

pub(crate) fn check_sorted(channel: u16, tags: &[u64]) -> Result<()> {
    match tags.windows(2).position(|w| w[1] < w[0]) {
        Some(i) => Err(Error::Unsorted { channel, index: i + 1 }),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let s = TagStream::new(3, vec![1, 2, 0x0102_0304]).unwrap();
        let mut buf = Vec::new();
        s.write_to(&mut buf).unwrap();
        assert_eq!(&buf[0..4], b"PFTG");
        assert_eq!(&buf[4..6], &[1, 0]);
        assert_eq!(&buf[6..8], &[3, 0]);
        assert_eq!(&buf[8..16], &3u64.to_le_bytes());
        assert_eq!(&buf[32..40], &[4, 3, 2, 1, 0, 0, 0, 0]);
        assert_eq!(buf.len(), 16 + 24);
    }

    #[test]
    fn rejects_unsorted() {
        assert!(matches!(
            TagStream::new(1, vec![5, 3]),
            Err(Error::Unsorted { channel: 1, index: 1 })
        ));
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(TagStream::read_from(&b"XXXX\x01\x00\x00\x00\x00\x00\x00\x00\x00\x00\x00\x00"[..]).is_err());
        let mut buf = Vec::new();
        TagStream::new(0, vec![1, 2]).unwrap().write_to(&mut buf).unwrap();
        buf.pop();
        assert!(TagStream::read_from(&buf[..]).is_err());
    }

    proptest! {
        #[test]
        fn binary_round_trip(mut tags in proptest::collection::vec(any::<u64>(), 0..200), ch in any::<u16>()) {
            tags.sort_unstable();
            let s = TagStream::new(ch, tags).unwrap();
            let mut buf = Vec::new();
            s.write_to(&mut buf).unwrap();
            prop_assert_eq!(TagStream::read_from(&buf[..]).unwrap(), s);
        }
    }
}
