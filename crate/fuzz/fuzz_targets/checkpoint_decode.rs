#![no_main]

use ftncfm::diffcore::checkpoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(params) = checkpoint::decode(data) {
        let again = checkpoint::decode(&checkpoint::encode(&params)).expect("re-encoded checkpoint must decode");
        assert_eq!(again.layout(), params.layout());
    }
});
