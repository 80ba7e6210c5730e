//! CRC-8 with polynomial 0x07, initial value 0x00, no reflection, no final xor.

const POLY: u8 = 0x07;

const TABLE: [u8; 256] = build_table();

const fn build_table() -> [u8; 256] {
    let mut table = [0u8; 256];
    let mut i = 0;
    while i < 256 {
        let mut crc = i as u8;
        let mut bit = 0;
        while bit < 8 {
            crc = if crc & 0x80 != 0 { (crc << 1) ^ POLY } else { crc << 1 };
            bit += 1;
        }
        table[i] = crc;
        i += 1;
    }
    table
}

pub fn crc8(data: &[u8]) -> u8 {
    crc8_update(0, data)
}

pub fn crc8_update(crc: u8, data: &[u8]) -> u8 {
    data.iter().fold(crc, |c, &b| TABLE[(c ^ b) as usize])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalogue_check_value() {
        assert_eq!(crc8(b"123456789"), 0xF4);
        assert_eq!(crc8(&[]), 0x00);
    }

    #[test]
    fn incremental_matches_one_shot() {
        let data = b"incremental update";
        let (a, b) = data.split_at(7);
        assert_eq!(crc8_update(crc8(a), b), crc8(data));
    }
}
