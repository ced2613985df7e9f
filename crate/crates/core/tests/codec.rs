mod common;

use neurosim::hal::{AnyContainer, Backend, BusCommand};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn ten_thousand_containers_round_trip_on_both_backends() {
    common::codec_round_trip(10_000, 7).unwrap();
}

proptest! {
    #[test]
    fn register_image_decodes_to_container(seed in any::<u64>()) {
        let (coord, container) = common::random_container(&mut ChaCha8Rng::seed_from_u64(seed));
        let image = container.register_image(coord).unwrap();
        let addresses = container.kind().read_addresses(coord).unwrap();
        let words: Vec<u32> = image.iter().map(|&(_, w)| w).collect();
        prop_assert_eq!(image.iter().map(|&(a, _)| a).collect::<Vec<_>>(), addresses);
        let decoded: AnyContainer = container.kind().decode(coord, &words).unwrap();
        prop_assert_eq!(decoded, container);
    }

    #[test]
    fn jtag_writes_three_commands_per_word(seed in any::<u64>()) {
        let (coord, container) = common::random_container(&mut ChaCha8Rng::seed_from_u64(seed));
        let words = container.register_image(coord).unwrap().len();
        let omnibus = container.encode_write(coord, Backend::Omnibus).unwrap();
        let jtag = container.encode_write(coord, Backend::Jtag).unwrap();
        prop_assert_eq!(omnibus.len(), words);
        prop_assert_eq!(jtag.len(), 3 * words);
        prop_assert!(omnibus.iter().chain(&jtag).all(|c: &BusCommand| !c.is_read()));
    }
}
