# %% [markdown]
# Scoring a predicted plan against a reference
#
# A structured answer has three sections. We parse two of them, build the
# cross-matching matrix and read off the quantity and order scores.

# %%
from planbench.match_metrics import RuleMatcher, build_match_matrix, evaluate_plan_pair, filter_low_level
from planbench.match_metrics import hungarian_quantity, lcs_order
from planbench.plan_format import parse_lenient
from planbench.reward_planning import format_reward

reference = """<response>Sure, I will wash the apple.</response>
<plans>
1.[Navigate] Go to the counter
2.[Manipulate] Pick up the apple
3.[Navigate] Go to the sink
4.[Manipulate] Put the apple in the sink
5.[Manipulate] Turn on the faucet
</plans>
<actions>
[['Navigate', 'CounterTop'], ['Pick', 'Apple'], ['Navigate', 'Sink'], ['Place', 'Apple', 'Sink'], ['Toggle', 'Faucet']]
</actions>"""

# Same actions, but the faucet is switched on before the apple is placed.
prediction = reference.replace(
    "['Place', 'Apple', 'Sink'], ['Toggle', 'Faucet']", "['Toggle', 'Faucet'], ['Place', 'Apple', 'Sink']"
)

# %%
pred, _ = parse_lenient(prediction)
gt, _ = parse_lenient(reference)
p, g = filter_low_level(pred.actions), filter_low_level(gt.actions)
M = build_match_matrix(p, g, RuleMatcher())
print(M.cells.astype(int))
print("quantity:", hungarian_quantity(M), "order:", lcs_order(p, g, M))

# %%
metrics = evaluate_plan_pair(prediction, reference)
print(metrics.to_dict())

# %% Format reward of the two strings (both well formed)
print(format_reward(prediction).total, format_reward(reference).total)
