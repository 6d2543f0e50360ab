//! Presence counting of registered phones.

use std::collections::BTreeSet;

/// A phone's Bluetooth hardware address.
pub type PhoneId = u64;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OccupancyRegistry {
    pub registered_ids: BTreeSet<PhoneId>,
}

impl OccupancyRegistry {
    pub fn new(ids: impl IntoIterator<Item = PhoneId>) -> Self {
        Self {
            registered_ids: ids.into_iter().collect(),
        }
    }
}

/// `(onboarded__p, occupancy__p)`: phones onboarded and onboarded phones in
/// range. Unregistered phones are never counted.
pub fn occupancy_scan(registry: &OccupancyRegistry, present_ids: &BTreeSet<PhoneId>) -> (u64, u64) {
    let onboarded = registry.registered_ids.len() as u64;
    let seen = registry.registered_ids.intersection(present_ids).count() as u64;
    (onboarded, seen)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts() {
        let reg = OccupancyRegistry::new([1, 2, 3]);
        assert_eq!(occupancy_scan(&reg, &BTreeSet::from([1, 3])), (3, 2));
        assert_eq!(occupancy_scan(&OccupancyRegistry::default(), &BTreeSet::from([1])), (0, 0));
        let reg = OccupancyRegistry::new([1, 2]);
        assert_eq!(occupancy_scan(&reg, &BTreeSet::from([2, 7, 8, 9, 10])), (2, 1));
    }
}
