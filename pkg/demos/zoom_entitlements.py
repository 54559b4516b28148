"""Compile the Zoom pricing into toggles and ask who may host a big meeting.

    python demos/zoom_entitlements.py
"""

from horizon.compiler import entitlement_context, sync_store
from horizon.evaluator import evaluate_feature
from horizon.pricing import (
    ZOOM_PRICING_PATH,
    Subscription,
    configuration_space,
    iter_subscriptions,
    load_pricing,
    resolve_entitlements,
)
from horizon.store import ToggleStore


def main():
    pricing = load_pricing(ZOOM_PRICING_PATH)
    print(f"{pricing.name} {pricing.version}: {configuration_space(pricing)} possible subscriptions")

    store = ToggleStore()
    plan, revision = sync_store(store, pricing)
    print(f"generated {len(plan.toggles_to_create)} toggles and {len(plan.rules_to_create)} rules "
          f"at revision {revision}")
    for rule_id in store.read_feature("meetings").rule_ids:
        print(f"  {rule_id}: {store.read_rule(rule_id).expression_source}")

    print("\nmeeting with 250 assistants, 45 minutes:")
    usage = {"meeting": {"assistants": 250}, "user": {"currentTime": 45}}
    snap = store.snapshot()
    for sub in iter_subscriptions(pricing):
        ent = resolve_entitlements(pricing, sub)
        result = evaluate_feature(snap, "meetings", entitlement_context(pricing, sub, usage))
        label = "+".join([sub.plan, *sorted(sub.add_ons)])
        print(f"  {label:<56} limit {ent.limits['maxAssistantsPerMeeting']:>5}  "
              f"{'yes' if result.value else 'no ':<3} ({result.reason})")

    sub = Subscription("PRO", {"translated-captions"})
    granted = sorted(f for f, on in resolve_entitlements(pricing, sub).features.items() if on)
    print(f"\nPRO + translated-captions grants: {', '.join(granted)}")


if __name__ == "__main__":
    main()
