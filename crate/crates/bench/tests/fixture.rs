use torqueloop_bench::TickFixture;
use torqueloop_core::scenario::Condition;

#[test]
fn every_condition_produces_finite_stamped_commands() {
    for condition in Condition::ALL {
        let mut fx = TickFixture::new(condition).unwrap();
        for _ in 0..5 {
            fx.publish();
            fx.tick();
        }
        for r in 0..fx.bus.len() {
            let slot = fx.bus.command(r);
            assert_eq!(slot.stamp, Some(4), "{}", condition.label());
            assert!(fx.command(r).iter().all(|v| v.is_finite()), "{}", condition.label());
        }
    }
}
