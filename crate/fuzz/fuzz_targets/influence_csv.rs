#![no_main]

use ftncfm::ft_engine::report::read_records;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = read_records(data);
});
