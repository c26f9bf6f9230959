//! Little-endian bit packing of narrow codes: the first code occupies the
//! least significant bits of the first byte, and codes may straddle bytes.

/// Bytes needed for `count` codes of `bits` width.
pub fn packed_len(count: usize, bits: u32) -> usize {
    (count * bits as usize).div_ceil(8)
}

/// Packs `codes` (each `< 2^bits`) into a fresh byte vector.
pub fn pack(codes: &[u8], bits: u32) -> Vec<u8> {
    let mut out = vec![0u8; packed_len(codes.len(), bits)];
    pack_into(codes, bits, &mut out);
    out
}

/// Packs into an existing zeroed buffer of at least `packed_len` bytes.
pub fn pack_into(codes: &[u8], bits: u32, out: &mut [u8]) {
    debug_assert!((1..=8).contains(&bits));
    let mask = ((1u16 << bits) - 1) as u8;
    let mut bit = 0usize;
    for &c in codes {
        let v = (c & mask) as u16;
        let byte = bit / 8;
        let shift = bit % 8;
        let w = v << shift;
        out[byte] |= w as u8;
        if shift + bits as usize > 8 {
            out[byte + 1] |= (w >> 8) as u8;
        }
        bit += bits as usize;
    }
}

/// Unpacks `count` codes of width `bits`.
pub fn unpack(bytes: &[u8], bits: u32, count: usize) -> Vec<u8> {
    let mask = (1u16 << bits) - 1;
    let mut out = Vec::with_capacity(count);
    let mut bit = 0usize;
    for _ in 0..count {
        let byte = bit / 8;
        let shift = bit % 8;
        let mut w = bytes[byte] as u16;
        if shift + bits as usize > 8 {
            w |= (bytes[byte + 1] as u16) << 8;
        }
        out.push(((w >> shift) & mask) as u8);
        bit += bits as usize;
    }
    out
}
