use super::*;
use crate::model::{Device, DeviceState};

fn r(i: u32) -> RoutineId {
    RoutineId(i)
}

fn d(i: u32) -> DeviceId {
    DeviceId(i)
}

fn table(n: u32) -> LineageTable {
    let devices: Vec<Device> = (0..n)
        .map(|i| Device { id: d(i), name: format!("dev{i}"), initial: DeviceState::off() })
        .collect();
    LineageTable::new(&devices, LeasePolicy::default())
}

fn plan(dev: u32, index: usize, start: u64, dur: u64, target: DeviceState) -> EntryPlan {
    EntryPlan { device: d(dev), index, start, duration: dur, desired: target, reads: false, hold_estimate_ms: dur }
}

fn entry(routine: u32, status: LockStatus, desired: DeviceState, start: u64, dur: u64) -> LockAccess {
    LockAccess {
        routine: r(routine),
        status,
        desired,
        applied: None,
        start,
        duration: dur,
        used: status != LockStatus::Scheduled,
        done: status == LockStatus::Released,
        reads: false,
    }
}

#[test]
fn current_status_prefers_holder_then_released_then_committed() {
    let mut t = table(1);
    assert_eq!(t.current_status(d(0)), DeviceState::off());

    t.insert_raw(d(0), entry(1, LockStatus::Released, DeviceState::Level(1), 0, 10));
    t.insert_raw(d(0), entry(2, LockStatus::Released, DeviceState::Level(2), 10, 10));
    assert_eq!(t.current_status(d(0)), DeviceState::Level(2));

    t.insert_raw(d(0), entry(3, LockStatus::Acquired, DeviceState::Level(3), 20, 10));
    t.insert_raw(d(0), entry(4, LockStatus::Scheduled, DeviceState::Level(4), 30, 10));
    assert_eq!(t.current_status(d(0)), DeviceState::Level(3));
}

#[test]
fn abort_of_last_writer_restores_previous_value() {
    let mut t = table(1);
    t.insert(r(1), vec![plan(0, 0, 0, 10, DeviceState::on())], 0);
    t.note_use(r(1), d(0));
    t.record_write(r(1), d(0), DeviceState::on());
    t.transition_on_release(r(1), d(0), 10);
    t.insert(r(2), vec![plan(0, 1, 10, 10, DeviceState::Level(7))], 10);
    assert!(t.can_use(r(2), d(0)));
    t.note_use(r(2), d(0));
    t.record_write(r(2), d(0), DeviceState::Level(7));

    let (fix, _, _) = t.abort_rollback(r(2), 15, |_| DeviceState::Level(7));
    assert_eq!(fix, vec![Correction { device: d(0), state: DeviceState::on() }]);
    assert!(t.lineage(d(0)).position(r(2)).is_none());
}

#[test]
fn abort_of_overwritten_routine_needs_no_rollback() {
    let mut t = table(1);
    t.insert(r(1), vec![plan(0, 0, 0, 10, DeviceState::on())], 0);
    t.note_use(r(1), d(0));
    t.record_write(r(1), d(0), DeviceState::on());
    t.transition_on_release(r(1), d(0), 10);
    t.insert(r(2), vec![plan(0, 1, 10, 10, DeviceState::Level(7))], 10);
    t.note_use(r(2), d(0));
    t.record_write(r(2), d(0), DeviceState::Level(7));

    let (fix, _, _) = t.abort_rollback(r(1), 12, |_| DeviceState::Level(7));
    assert!(fix.is_empty());
    assert_eq!(t.lineage(d(0)).entries.len(), 1);
}

#[test]
fn abort_skips_correction_when_device_already_matches() {
    let mut t = table(1);
    t.insert(r(1), vec![plan(0, 0, 0, 10, DeviceState::on())], 0);
    t.note_use(r(1), d(0));
    t.record_write(r(1), d(0), DeviceState::on());
    let (fix, _, _) = t.abort_rollback(r(1), 5, |_| DeviceState::off());
    assert!(fix.is_empty());
}

#[test]
fn commit_compacts_left_entries_and_updates_committed_state() {
    let mut t = table(2);
    t.insert(r(1), vec![plan(0, 0, 0, 10, DeviceState::on())], 0);
    t.note_use(r(1), d(0));
    t.record_write(r(1), d(0), DeviceState::on());
    t.transition_on_release(r(1), d(0), 10);
    t.insert(r(2), vec![plan(0, 1, 10, 10, DeviceState::Level(3)), plan(1, 0, 20, 10, DeviceState::on())], 10);
    t.note_use(r(2), d(0));
    t.record_write(r(2), d(0), DeviceState::Level(3));
    t.transition_on_release(r(2), d(0), 20);
    t.commit_with_compaction(r(2), 20);

    assert!(t.lineage(d(0)).entries.is_empty());
    assert_eq!(t.committed_state(d(0)), &DeviceState::Level(3));
    // Never wrote d1, so its committed state is untouched.
    assert!(t.lineage(d(1)).entries.is_empty());
    assert_eq!(t.committed_state(d(1)), &DeviceState::off());
    assert!(t.check_invariants().is_empty());
}

#[test]
fn pre_lease_puts_borrower_first_and_returns_lock() {
    let mut t = table(1);
    t.insert(r(1), vec![plan(0, 0, 0, 100, DeviceState::on())], 0);
    assert!(t.can_use(r(1), d(0)));

    let out = t.try_pre_lease(r(1), r(2), plan(0, 0, 0, 10, DeviceState::Level(2)), 0);
    let LeaseOutcome::Granted(rec) = out else { panic!("{out:?}") };
    assert_eq!(rec.kind, LeaseKind::Pre);
    assert_eq!(rec.revoke_at, 11);
    assert!(t.can_use(r(2), d(0)));
    assert_eq!(t.entry(r(1), d(0)).unwrap().status, LockStatus::Leased(r(2)));
    t.set_plan(r(1), d(0), 10, 100);
    assert!(t.check_invariants().is_empty());

    t.note_use(r(2), d(0));
    t.transition_on_release(r(2), d(0), 10);
    assert!(t.can_use(r(1), d(0)));
    assert!(t.leases().iter().all(|l| l.kind != LeaseKind::Pre));
}

#[test]
fn pre_lease_refused_once_holder_started() {
    let mut t = table(1);
    t.insert(r(1), vec![plan(0, 0, 0, 100, DeviceState::on())], 0);
    t.note_use(r(1), d(0));
    let out = t.try_pre_lease(r(1), r(2), plan(0, 0, 0, 10, DeviceState::on()), 5);
    assert_eq!(out, LeaseOutcome::Denied(Denial::HolderBusy));
}

#[test]
fn post_lease_hands_over_after_last_access() {
    let mut t = table(1);
    t.insert(r(1), vec![plan(0, 0, 0, 10, DeviceState::on())], 0);
    t.note_use(r(1), d(0));
    t.record_write(r(1), d(0), DeviceState::on());
    t.transition_on_release(r(1), d(0), 10);
    let out = t.try_post_lease(r(1), r(2), plan(0, 1, 10, 10, DeviceState::off()), 10);
    assert!(matches!(out, LeaseOutcome::Granted(LeaseRecord { kind: LeaseKind::Post, .. })), "{out:?}");
    assert!(t.can_use(r(2), d(0)));
}

#[test]
fn post_lease_refused_for_reader_of_uncommitted_write() {
    let mut t = table(1);
    t.insert(r(1), vec![plan(0, 0, 0, 10, DeviceState::on())], 0);
    t.note_use(r(1), d(0));
    t.record_write(r(1), d(0), DeviceState::on());
    t.transition_on_release(r(1), d(0), 10);
    let mut p = plan(0, 1, 10, 10, DeviceState::off());
    p.reads = true;
    assert_eq!(t.try_post_lease(r(1), r(2), p, 10), LeaseOutcome::Denied(Denial::DirtyRead));
}

#[test]
fn placement_contradicting_existing_order_is_denied() {
    let mut t = table(2);
    t.insert(r(1), vec![plan(0, 0, 0, 10, DeviceState::on()), plan(1, 0, 0, 10, DeviceState::on())], 0);
    t.insert(r(2), vec![plan(0, 1, 10, 10, DeviceState::on())], 0);
    // R2 after R1 on d0, so R2 may not precede R1 on d1.
    assert_eq!(t.validate(r(2), &[(d(1), 0)]), Err(Denial::Contradiction));
    assert_eq!(t.validate(r(2), &[(d(1), 1)]), Ok(()));
    assert_eq!(t.serialize_before(r(1), r(2)), Ok(Relation::Before));
}

#[test]
fn transitive_contradiction_is_denied() {
    // R1 < R2 on d0, R2 < R3 on d1; placing R3 before R1 on d2 closes a cycle
    // even though R3 and R1 share no device yet.
    let mut t = table(3);
    t.insert(r(1), vec![plan(0, 0, 0, 10, DeviceState::on()), plan(2, 0, 0, 10, DeviceState::on())], 0);
    t.insert(r(2), vec![plan(0, 1, 10, 10, DeviceState::on()), plan(1, 0, 0, 10, DeviceState::on())], 0);
    assert_eq!(t.validate(r(3), &[(d(1), 1), (d(2), 0)]), Err(Denial::Contradiction));
}

#[test]
fn all_or_none_acquisition() {
    let mut t = table(2);
    t.insert(r(1), vec![plan(0, 0, 0, 10, DeviceState::on())], 0);
    t.note_use(r(1), d(0));
    let plans = vec![plan(0, 1, 0, 10, DeviceState::on()), plan(1, 0, 0, 10, DeviceState::on())];
    assert_eq!(t.acquire_all_or_none(r(2), plans, 0), AcquireOutcome::Retry);
    assert!(!t.is_member(r(2)));
    assert!(t.lineage(d(1)).entries.is_empty());

    let plans = vec![plan(1, 0, 0, 10, DeviceState::on())];
    assert!(matches!(t.acquire_all_or_none(r(2), plans, 0), AcquireOutcome::Acquired(_)));
    assert!(t.can_use(r(2), d(1)));
}

#[test]
fn invariant_checker_flags_overlap_and_double_holder() {
    let mut t = table(1);
    t.insert_raw(d(0), entry(1, LockStatus::Acquired, DeviceState::on(), 0, 10));
    t.insert_raw(d(0), entry(2, LockStatus::Acquired, DeviceState::on(), 5, 10));
    let kinds: Vec<_> = t.check_invariants().into_iter().map(|v| v.kind).collect();
    assert!(kinds.contains(&ViolationKind::Overlap));
    assert!(kinds.contains(&ViolationKind::MultipleHolders));
}

#[test]
fn invariant_checker_flags_status_order_and_inconsistency() {
    let mut t = table(2);
    t.insert_raw(d(0), entry(1, LockStatus::Scheduled, DeviceState::on(), 0, 10));
    t.insert_raw(d(0), entry(2, LockStatus::Released, DeviceState::on(), 10, 10));
    t.insert_raw(d(1), entry(2, LockStatus::Released, DeviceState::on(), 0, 10));
    t.insert_raw(d(1), entry(1, LockStatus::Acquired, DeviceState::on(), 10, 10));
    let kinds: Vec<_> = t.check_invariants().into_iter().map(|v| v.kind).collect();
    assert!(kinds.contains(&ViolationKind::StatusOrder));
    assert!(kinds.contains(&ViolationKind::Inconsistent));
    assert!(t.serialize_before(r(1), r(2)).is_err());
}

#[test]
fn expired_pre_lease_revoked_only_when_lender_waits() {
    let mut t = table(1);
    t.insert(r(1), vec![plan(0, 0, 0, 100, DeviceState::on())], 0);
    let LeaseOutcome::Granted(rec) = t.try_pre_lease(r(1), r(2), plan(0, 0, 0, 100, DeviceState::off()), 0) else {
        panic!()
    };
    assert_eq!(rec.revoke_at, 110);
    assert!(t.revoke_expired_leases(100, |_| true).is_empty());
    assert!(t.revoke_expired_leases(200, |_| false).is_empty());
    let revoked = t.revoke_expired_leases(200, |l| l.src == r(1) && l.device == d(0));
    assert_eq!(revoked.len(), 1);
    assert_eq!(revoked[0].dst, r(2));
}

#[test]
fn deferred_head_activates_at_planned_start() {
    let mut t = table(1);
    t.insert(r(1), vec![plan(0, 0, 50, 10, DeviceState::on())], 0);
    assert!(!t.can_use(r(1), d(0)));
    let (acts, _) = t.refresh_all(50);
    assert_eq!(acts, vec![Activation::Now(r(1))]);
    assert!(t.can_use(r(1), d(0)));
}

#[test]
fn dumps_render_every_lineage() {
    let mut t = table(2);
    t.insert(r(1), vec![plan(0, 0, 0, 10, DeviceState::on())], 0);
    let text = t.dump_text();
    assert_eq!(text.lines().count(), 2);
    assert!(text.contains("R1:A ON @0-10"), "{text}");
    assert_eq!(t.dump_json().as_array().unwrap().len(), 2);
}

#[test]
fn reader_waits_for_uncommitted_writer() {
    let mut t = table(1);
    t.insert(r(1), vec![plan(0, 0, 0, 10, DeviceState::on())], 0);
    t.note_use(r(1), d(0));
    t.record_write(r(1), d(0), DeviceState::on());
    t.transition_on_release(r(1), d(0), 10);
    let mut p = plan(0, 1, 10, 10, DeviceState::off());
    p.reads = true;
    t.insert(r(2), vec![p], 10);
    assert!(!t.can_use(r(2), d(0)));
    t.commit_with_compaction(r(1), 12);
    assert!(t.can_use(r(2), d(0)));
}
