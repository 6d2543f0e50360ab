//! Thermostat/boiler OpenTherm traffic as seen by a bus monitor.

use super::house::House;
use crate::protocols::opentherm::{data_id, slave_status};
use crate::protocols::{encode_f88, MsgType, OpenThermFrame};

/// Data-ids polled by the thermostat, one request per second.
pub const POLL_CYCLE: [u8; 10] = [
    data_id::STATUS,
    data_id::BOILER_WATER_TEMP,
    data_id::RETURN_WATER_TEMP,
    data_id::REL_MODULATION,
    data_id::MAX_REL_MODULATION,
    data_id::MAX_CAPACITY_MIN_MODULATION,
    data_id::ROOM_SETPOINT,
    data_id::ROOM_TEMP,
    data_id::MAX_CH_SETPOINT,
    data_id::STATUS,
];

/// Master CH enable and DHW enable, in the status request's high byte.
const MASTER_STATUS: u16 = 0b11 << 8;

/// Thermostat request and boiler reply for one slot of the cycle.
/// `thermostat_room_c` is the room temperature the thermostat measures.
pub fn exchange(house: &House, cycle_pos: usize, thermostat_room_c: f64) -> [OpenThermFrame; 2] {
    let id = POLL_CYCLE[cycle_pos % POLL_CYCLE.len()];
    let (request, reply) = match id {
        data_id::STATUS => {
            let mut lb = 0u8;
            if house.ch_on && !house.dhw_on {
                lb |= slave_status::CH_MODE;
            }
            if house.dhw_on {
                lb |= slave_status::DHW_MODE;
            }
            if house.flame() {
                lb |= slave_status::FLAME;
            }
            ((MsgType::ReadData, MASTER_STATUS), (MsgType::ReadAck, MASTER_STATUS | lb as u16))
        }
        data_id::BOILER_WATER_TEMP => read(encode_f88(house.supply_c)),
        data_id::RETURN_WATER_TEMP => read(encode_f88(house.return_c)),
        data_id::REL_MODULATION => read(encode_f88(house.modulation)),
        data_id::MAX_REL_MODULATION => write(encode_f88(100.0)),
        data_id::MAX_CAPACITY_MIN_MODULATION => {
            read(((house.params.boiler_max_kw as u16) << 8) | house.params.min_modulation as u16)
        }
        data_id::ROOM_SETPOINT => write(encode_f88(house.setpoint_c)),
        data_id::ROOM_TEMP => write(encode_f88(thermostat_room_c)),
        data_id::MAX_CH_SETPOINT => read(encode_f88(house.params.max_supply_c)),
        _ => unreachable!("cycle holds known ids"),
    };
    [
        OpenThermFrame::new(request.0, id, request.1),
        OpenThermFrame::new(reply.0, id, reply.1),
    ]
}

fn read(value: u16) -> ((MsgType, u16), (MsgType, u16)) {
    ((MsgType::ReadData, 0), (MsgType::ReadAck, value))
}

fn write(value: u16) -> ((MsgType, u16), (MsgType, u16)) {
    ((MsgType::WriteData, value), (MsgType::WriteAck, value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocols::opentherm::frame_values;
    use crate::protocols::FrameSampler;
    use crate::sim::house::HouseParams;
    use rand::SeedableRng;

    #[test]
    fn one_day_of_traffic_fills_every_slot() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let start = 1_729_468_800;
        let mut house = House::new(HouseParams::random(&mut rng), chrono_tz::Europe::Amsterdam, 2, start);
        let mut sampler = FrameSampler::opentherm_monitor();
        let mut out = Vec::new();
        for s in 0..86_400i64 {
            let t = start + s;
            house.advance_to(t);
            let room = house.room_c;
            for f in exchange(&house, s as usize, room) {
                out.extend(sampler.push(t, &f));
            }
        }
        out.extend(sampler.flush_until(start + 86_400));
        let count = |p: &str| out.iter().filter(|m| m.property == p).count();
        assert_eq!(count("boilerSupplyTemp"), 8640);
        assert_eq!(count("isBoilerFlameOn"), 2880);
        assert_eq!(count("maxBoilerCap"), 2880);
        assert_eq!(count("roomTemp"), 288);
        assert_eq!(sampler.stats().non_reply, 86_400);
        assert!(sampler.stats().unknown_ids.is_empty());
        let f = exchange(&house, 5, 20.0)[1];
        let values = frame_values(&f).unwrap();
        assert_eq!(values[0].0, "maxBoilerCap");
    }
}
