# %% [markdown]
# Running plans in the household simulator
#
# Gold plans from the bundled suite execute cleanly; swapping two steps
# usually breaks a precondition, and the trace says which one.

# %%
from planbench.sim import bundled_scene, execute_plan, load_tasks, run_task, success_rate

tasks = load_tasks()
traces = [run_task(t) for t in tasks]
print(f"{len(tasks)} tasks, success rate {success_rate(traces):.2f}")

# %%
apple = next(t for t in tasks if t.id == "kitchen_wash_apple_fridge")
print(run_task(apple).render())

# %% Swap two steps and look at the first failure
broken = apple.perturbation.apply(apple.gold_actions)
trace = run_task(apple, broken)
f = trace.first_failure
print(f.step, f.action, f.reason, f.detail)

# %% Free-form plans work too; object names are resolved against the scene.
from planbench.plan_format import AtomicAction as A

world = bundled_scene("kitchen")
plan = [A("Navigate", ("fridge",)), A("Open", ("the fridge",)), A("Close", ("fridge",))]
for step in execute_plan(world, plan).steps:
    print(step.step, step.skill, step.resolution, step.outcome)
