#![no_main]

use libfuzzer_sys::fuzz_target;
use villani_core::model::Checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(ck) = Checkpoint::decode(data) {
        // bytes, not values: θ may hold NaNs
        let bytes = ck.encode().expect("decoded checkpoint re-encodes");
        let again = Checkpoint::decode(&bytes).expect("round trip");
        assert_eq!(again.encode().expect("re-encodes"), bytes);
    }
});
