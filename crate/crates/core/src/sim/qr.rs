//! Device identity printed on the QR label.

use rand::Rng;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QrPayload {
    pub name: String,
    pub pop: String,
}

/// Hex digits of the name hash kept after the type prefix.
pub const NAME_HASH_DIGITS: usize = 12;

/// Device name from type and MAC; proof of possession from `rng`.
pub fn make_qr_payload<R: Rng + ?Sized>(device_type_name: &str, hardware_address: u64, rng: &mut R) -> QrPayload {
    let mac = hardware_address & 0xFFFF_FFFF_FFFF;
    let mut h = Sha256::new();
    h.update(device_type_name.as_bytes());
    h.update(b"\0");
    h.update(&mac.to_be_bytes()[2..]);
    let digest = hex::encode(h.finalize());
    let mut pop = [0u8; 16];
    rng.fill(&mut pop);
    QrPayload {
        name: format!("{device_type_name}_{}", &digest[..NAME_HASH_DIGITS]),
        pop: hex::encode(pop),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    #[test]
    fn names_are_stable_and_pops_are_not() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = make_qr_payload("living-room-module", 0x24_0A_C4_12_34_56, &mut rng);
        let b = make_qr_payload("living-room-module", 0x24_0A_C4_12_34_56, &mut rng);
        assert_eq!(a.name, b.name);
        assert_ne!(a.pop, b.pop);
        assert!(a.name.starts_with("living-room-module_"));
    }

    #[test]
    fn single_bit_changes_name() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut names = BTreeSet::new();
        let base = 0x24_0A_C4_00_00_00u64;
        for bit in 0..48 {
            names.insert(make_qr_payload("smart-meter-module", base ^ (1 << bit), &mut rng).name);
        }
        names.insert(make_qr_payload("smart-meter-module", base, &mut rng).name);
        assert_eq!(names.len(), 49);
    }
}
