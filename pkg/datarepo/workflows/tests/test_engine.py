import random
import threading
import time
from concurrent.futures import wait
from unittest import mock

import pytest
from django.test import SimpleTestCase

from datasets.models import CommitRef
from repository.exceptions import InvalidState, NotFound, PermissionDenied, ValidationError
from repository.testing import ADMIN, WorkflowTestCase, read_tree, write_tree
from workflows.daemon import Daemon
from workflows.journal import RunJournal
from workflows.models import RunCause, RunState, StepState, check_transition
from workflows.pool import SlotPool
from workflows.registry import topological_order


def random_dag(rng: random.Random, size: int) -> list[dict]:
    steps = []
    for index in range(size):
        candidates = [step['id'] for step in steps]
        needs = rng.sample(candidates, k=min(len(candidates), rng.randrange(3)))
        steps.append({
            'id': f's{index}',
            'kind': 'program',
            'needs': needs,
            'argv': ['true'],
            'cpu_slots': rng.choice([1, 1, 2]),
        })
    return steps


class Occupancy:
    """Tracks slots in use across concurrently running step bodies."""

    def __init__(self, slots):
        self.slots = slots
        self.current = 0
        self.peak = 0
        self.lock = threading.Lock()

    def body(self, context):
        slots = self.slots[context.step.id]
        with self.lock:
            self.current += slots
            self.peak = max(self.peak, self.current)
        try:
            time.sleep(0.002)
            write_tree(context.outputs_dir, {context.step.id: b'done'})
        finally:
            with self.lock:
                self.current -= slots


class SchedulingTests(WorkflowTestCase):
    def check_random_dags(self, rounds: int, seed: int) -> None:
        rng = random.Random(seed)
        occupancy = Occupancy({})
        engine, runner = self.make_engine(pool_size=3, default=occupancy.body)
        for round_ in range(rounds):
            steps = random_dag(rng, rng.randint(1, 20))
            occupancy.slots = {step['id']: step['cpu_slots'] for step in steps}
            runner.calls.clear()
            with self.subTest(round=round_):
                name = f'dag{round_}'
                engine.register_workflow(ADMIN, {'name': name, 'steps': steps})
                run = engine.run_workflow(ADMIN, name)

                self.assertEqual(run.state, RunState.SUCCEEDED)
                self.assertEqual(sorted(runner.step_ids()), sorted(step['id'] for step in steps))
                self.assertLessEqual(occupancy.peak, 3)
                self.assertLessEqual(engine.pool.peak, 3)
                timing = {step_id: (start, end) for step_id, start, end in runner.calls}
                for step in steps:
                    for need in step['needs']:
                        self.assertLessEqual(timing[need][1], timing[step['id']][0])

    def test_random_dags_respect_dependencies_and_pool_size(self):
        self.check_random_dags(rounds=50, seed=7)

    @pytest.mark.slow
    def test_random_dags_at_acceptance_scale(self):
        self.check_random_dags(rounds=200, seed=8)

    def test_independent_steps_run_in_parallel(self):
        barrier = threading.Barrier(2, timeout=5)

        def meet(context):
            barrier.wait()

        engine, _ = self.make_engine({'a': meet, 'b': meet}, pool_size=2)
        engine.register_workflow(ADMIN, {'name': 'pair', 'steps': [
            {'id': 'a', 'kind': 'program', 'argv': ['true']},
            {'id': 'b', 'kind': 'program', 'argv': ['true']},
        ]})
        self.assertEqual(engine.run_workflow(ADMIN, 'pair').state, RunState.SUCCEEDED)

    def test_step_larger_than_the_pool_fails(self):
        engine, runner = self.make_engine(pool_size=2)
        engine.register_workflow(ADMIN, {'name': 'greedy', 'steps': [
            {'id': 'big', 'kind': 'program', 'argv': ['true'], 'cpu_slots': 3},
        ]})
        run = engine.run_workflow(ADMIN, 'greedy')
        self.assertEqual(run.state, RunState.FAILED)
        self.assertIn('3 slots', run.steps['big'].error)
        self.assertEqual(runner.calls, [])


class FailureTests(WorkflowTestCase):
    def test_failure_skips_descendants_only(self):
        def boom(context):
            raise RuntimeError('bad input')

        engine, runner = self.make_engine({'b': boom})
        engine.register_workflow(ADMIN, {'name': 'wf', 'steps': [
            {'id': 'a', 'kind': 'program', 'argv': ['true']},
            {'id': 'b', 'kind': 'program', 'needs': ['a'], 'argv': ['true']},
            {'id': 'c', 'kind': 'program', 'needs': ['b'], 'argv': ['true']},
            {'id': 'd', 'kind': 'program', 'needs': ['a'], 'argv': ['true']},
        ]})
        run = engine.run_workflow(ADMIN, 'wf')
        states = {step_id: result.state for step_id, result in run.steps.items()}
        self.assertEqual(states, {
            'a': StepState.SUCCEEDED,
            'b': StepState.FAILED,
            'c': StepState.SKIPPED,
            'd': StepState.SUCCEEDED,
        })
        self.assertEqual(run.state, RunState.FAILED)
        self.assertIn('bad input', run.steps['b'].error)
        self.assertNotIn('c', runner.step_ids())

    def test_unresolvable_input_fails_the_run_before_any_step(self):
        engine, runner = self.make_engine()
        engine.register_workflow(ADMIN, {'name': 'wf', 'steps': [
            {'id': 'a', 'kind': 'program', 'argv': ['true'], 'input': {'query': {'dataset': 'missing'}}},
        ]})
        run = engine.run_workflow(ADMIN, 'wf')
        self.assertEqual(run.state, RunState.FAILED)
        self.assertIn('NO_MATCH', run.error)
        self.assertEqual(runner.calls, [])

    def test_trigger_input_needs_an_event(self):
        engine, _ = self.make_engine()
        engine.register_workflow(ADMIN, {'name': 'wf', 'steps': [
            {'id': 'a', 'kind': 'program', 'argv': ['true'], 'input': {'trigger': True}},
        ]})
        run = engine.run_workflow(ADMIN, 'wf')
        self.assertEqual(run.state, RunState.FAILED)
        self.assertIn('triggering commit', run.error)


class StateMachineTests(WorkflowTestCase):
    def test_legal_and_illegal_transitions(self):
        legal = [
            (StepState.PENDING, StepState.RUNNING),
            (StepState.PENDING, StepState.AWAITING_HUMAN),
            (StepState.PENDING, StepState.SKIPPED),
            (StepState.RUNNING, StepState.SUCCEEDED),
            (StepState.RUNNING, StepState.FAILED),
            (StepState.AWAITING_HUMAN, StepState.SUCCEEDED),
            (StepState.AWAITING_HUMAN, StepState.FAILED),
        ]
        for current in StepState:
            for new in StepState:
                with self.subTest(current=current, new=new):
                    if (current, new) in legal:
                        check_transition('s', current, new)
                    else:
                        with self.assertRaises(InvalidState):
                            check_transition('s', current, new)

    def test_journal_enforces_the_state_machine(self):
        journal = RunJournal(self.repo, 'RUN1')
        journal.create('wf', '0' * 64, RunCause.manual(), ADMIN, ['a'])
        with self.assertRaises(InvalidState):
            journal.transition('a', StepState.SUCCEEDED)
        journal.transition('a', StepState.RUNNING)
        journal.transition('a', StepState.SUCCEEDED, exit_code=0)
        run = journal.finish(failed=False)
        self.assertEqual(run.state, RunState.SUCCEEDED)
        with self.assertRaises(InvalidState):
            journal.finish(failed=True)
        with self.assertRaises(InvalidState):
            journal.transition('a', StepState.FAILED)

    def test_every_recorded_run_follows_the_state_machine(self):
        rng = random.Random(3)
        steps = random_dag(rng, 8)
        failing = {steps[3]['id']}

        def body(context):
            if context.step.id in failing:
                raise RuntimeError('fail')

        engine, _ = self.make_engine(default=body, pool_size=2)
        engine.register_workflow(ADMIN, {'name': 'wf', 'steps': steps})
        run = engine.run_workflow(ADMIN, 'wf')

        states = {step_id: StepState.PENDING for step_id in run.steps}
        for record in RunJournal(self.repo, run.run_id).records()[1:]:
            if record['kind'] == 'step':
                new = StepState(record['state'])
                check_transition(record['step_id'], states[record['step_id']], new)
                states[record['step_id']] = new
        self.assertTrue(all(state.is_terminal for state in states.values()))


def review_workflow(**extra):
    return {
        'name': 'curate',
        'steps': [
            {'id': 'fetch', 'kind': 'program', 'argv': ['true'], 'input': {'query': {'dataset': 'raw', 'head_only': True}}},
            {'id': 'review', 'kind': 'human', 'needs': ['fetch'], 'instructions': 'spot-check', 'terminal': True},
        ],
        'output': {'dataset': 'clean', 'tags': ['latest-clean']},
        **extra,
    }


class OutputAndApprovalTests(WorkflowTestCase):
    def setUp(self):
        super().setUp()
        self.raw = self.checkin_files('raw', {'a.txt': b'alpha', 'b.txt': b'beta'})

    def test_human_step_waits_then_commits_output_with_provenance(self):
        engine, _ = self.make_engine()
        engine.register_workflow(ADMIN, review_workflow())
        run = engine.run_workflow(ADMIN, 'curate')
        self.assertEqual(run.state, RunState.AWAITING_HUMAN)
        self.assertEqual(run.pins, {'fetch': (self.raw.commit_id,)})
        self.assertIsNone(self.datasets.head('clean'))

        result = engine.approve_human_step(ADMIN, run.run_id[:10], 'review')
        self.assertEqual(result.state, StepState.SUCCEEDED)
        self.assertEqual(result.approved_by, ADMIN)

        waiting = engine.report(run.run_id)
        self.assertFalse(waiting.finished)
        self.assertTrue(engine.released_by_approval(waiting))
        self.assertIsNone(self.datasets.head('clean'))

        (resumed,) = Daemon(self.repo, engine=engine).run_once()
        self.assertEqual(resumed.run_id, run.run_id)
        run = engine.report(run.run_id)
        self.assertEqual(run.state, RunState.SUCCEEDED)
        output = self.datasets.load_commit(run.output_commit)
        self.assertEqual(output.dataset, 'clean')
        self.assertEqual(output.parents, (self.raw.commit_id,))
        self.assertEqual(output.attributes['run_id'], run.run_id)
        self.assertEqual(self.datasets.tags()['latest-clean'], output.commit_id)
        record = engine.lineage.provenance_of(output.commit_id)
        self.assertEqual(record.input_commits, (self.raw.commit_id,))
        self.assertEqual(record.run_id, run.run_id)
        self.assertEqual(record.terminal_step, 'review')

    def test_second_run_moves_the_output_tag_and_chains_parents(self):
        engine, _ = self.make_engine()
        engine.register_workflow(ADMIN, review_workflow())
        first = engine.run_workflow(ADMIN, 'curate')
        self.approve(engine, first.run_id, 'review')
        first = engine.report(first.run_id)

        raw2 = self.checkin_files('raw', {'a.txt': b'alpha2'})
        second = engine.run_workflow(ADMIN, 'curate')
        self.approve(engine, second.run_id, 'review')
        second = engine.report(second.run_id)

        output = self.datasets.load_commit(second.output_commit)
        self.assertEqual(output.parents, (first.output_commit, raw2.commit_id))
        self.assertEqual(self.datasets.tags()['latest-clean'], output.commit_id)

    def test_unchanged_output_makes_no_commit(self):
        engine, _ = self.make_engine()
        engine.register_workflow(ADMIN, review_workflow())
        first = engine.run_workflow(ADMIN, 'curate')
        self.approve(engine, first.run_id, 'review')
        head = self.datasets.head('clean')

        again = engine.run_workflow(ADMIN, 'curate')
        self.approve(engine, again.run_id, 'review')
        again = engine.report(again.run_id)
        self.assertEqual(again.state, RunState.SUCCEEDED)
        self.assertIsNone(again.output_commit)
        self.assertEqual(again.output_manifest, self.datasets.load_commit(head).manifest_id)
        self.assertEqual(self.datasets.head('clean'), head)

    def test_attached_directory_becomes_the_output(self):
        engine, _ = self.make_engine()
        engine.register_workflow(ADMIN, review_workflow())
        run = engine.run_workflow(ADMIN, 'curate')
        attached = write_tree(self.path('fixed'), {'a.txt': b'corrected'})
        self.approve(engine, run.run_id, 'review', attached_dir=attached)
        run = engine.report(run.run_id)
        self.datasets.checkout(ADMIN, CommitRef(run.output_commit), self.path('out'))
        self.assertEqual(read_tree(self.path('out')), {'a.txt': b'corrected'})

    def test_rejection_fails_the_run(self):
        engine, _ = self.make_engine()
        engine.register_workflow(ADMIN, review_workflow())
        run = engine.run_workflow(ADMIN, 'curate')
        result = self.approve(engine, run.run_id, 'review', approve=False)
        self.assertEqual(result.state, StepState.FAILED)
        run = engine.report(run.run_id)
        self.assertEqual(run.state, RunState.FAILED)
        self.assertIsNone(self.datasets.head('clean'))

    def test_approval_rules(self):
        engine, _ = self.make_engine()
        engine.register_workflow(ADMIN, review_workflow())
        run = engine.run_workflow(ADMIN, 'curate')
        with self.assertRaises(PermissionDenied):
            engine.approve_human_step('stranger', run.run_id, 'review')
        with self.assertRaises(NotFound):
            engine.approve_human_step(ADMIN, run.run_id, 'nope')
        with self.assertRaises(InvalidState):
            engine.approve_human_step(ADMIN, run.run_id, 'fetch')
        self.access.grant(ADMIN, 'carol', 'clean', 'writer')
        engine.approve_human_step('carol', run.run_id, 'review')
        with self.assertRaises(InvalidState):
            engine.approve_human_step(ADMIN, run.run_id, 'review')

    def test_run_ids_accept_unique_prefixes(self):
        engine, _ = self.make_engine()
        engine.register_workflow(ADMIN, review_workflow())
        run = engine.run_workflow(ADMIN, 'curate')
        self.assertEqual(engine.resolve_run_id(run.run_id.lower()[:12]), run.run_id)
        with self.assertRaises(NotFound):
            engine.resolve_run_id('ZZZZZZ')


class InputLayoutTests(WorkflowTestCase):
    def test_multi_input_and_fan_in_layout(self):
        self.checkin_files('shard-a', {'x': b'1'})
        self.checkin_files('shard-b', {'x': b'2'})
        seen = {}

        def look(context):
            seen[context.step.id] = read_tree(context.inputs_dir)
            write_tree(context.outputs_dir, {f'{context.step.id}.out': b'ok'})

        engine, _ = self.make_engine(default=look)
        engine.register_workflow(ADMIN, {'name': 'fan', 'steps': [
            {'id': 'all', 'kind': 'program', 'argv': ['true'],
             'input': {'query': {'dataset': 'shard-*', 'head_only': True}, 'multi': True}},
            {'id': 'other', 'kind': 'program', 'argv': ['true']},
            {'id': 'join', 'kind': 'program', 'argv': ['true'], 'needs': ['all', 'other']},
            {'id': 'tail', 'kind': 'program', 'argv': ['true'], 'needs': ['join']},
        ]})
        run = engine.run_workflow(ADMIN, 'fan')
        self.assertEqual(run.state, RunState.SUCCEEDED)
        self.assertEqual(sorted(path.split('@')[0] for path in seen['all']), ['shard-a', 'shard-b'])
        self.assertEqual(seen['other'], {})
        self.assertEqual(seen['join'], {'all/all.out': b'ok', 'other/other.out': b'ok'})
        self.assertEqual(seen['tail'], {'join.out': b'ok'})


class ResumeTests(WorkflowTestCase):
    def test_pending_run_is_resumed_by_the_daemon(self):
        engine, runner = self.make_engine()
        definition = engine.register_workflow(ADMIN, {'name': 'wf', 'steps': [
            {'id': 'a', 'kind': 'program', 'argv': ['true']},
            {'id': 'b', 'kind': 'program', 'argv': ['true'], 'needs': ['a']},
        ]})
        journal = RunJournal(self.repo, 'RUNPENDING')
        journal.create('wf', definition.def_id, RunCause.manual(), ADMIN, topological_order(definition))
        journal.transition('a', StepState.RUNNING)
        journal.transition('a', StepState.SUCCEEDED)
        write_tree(journal.step_dir('a') / 'work' / 'outputs', {'a.out': b'done'})

        (run,) = Daemon(self.repo, engine=engine).run_once()
        self.assertEqual(run.run_id, 'RUNPENDING')
        self.assertEqual(run.state, RunState.SUCCEEDED)
        self.assertEqual(runner.step_ids(), ['b'])

    def test_step_interrupted_mid_execution_fails(self):
        engine, runner = self.make_engine()
        definition = engine.register_workflow(ADMIN, {'name': 'wf', 'steps': [
            {'id': 'a', 'kind': 'program', 'argv': ['true']},
        ]})
        journal = RunJournal(self.repo, 'RUNCRASHED')
        journal.create('wf', definition.def_id, RunCause.manual(), ADMIN, ['a'])
        journal.transition('a', StepState.RUNNING)

        run = engine.resume('RUNCRASHED').result()
        self.assertEqual(run.state, RunState.FAILED)
        self.assertIn('interrupted', run.steps['a'].error)
        self.assertEqual(runner.calls, [])

    def test_finished_run_is_not_resumed(self):
        engine, runner = self.make_engine()
        engine.register_workflow(ADMIN, {'name': 'wf', 'steps': [{'id': 'a', 'kind': 'program', 'argv': ['true']}]})
        run = engine.run_workflow(ADMIN, 'wf')
        self.assertEqual(engine.resume(run.run_id).result(), run)
        self.assertEqual(Daemon(self.repo, engine=engine).resume_unfinished(), [])
        self.assertEqual(len(runner.calls), 1)

    def test_daemon_cycle_drives_an_approved_run(self):
        self.checkin_files('raw', {'a.txt': b'alpha'})
        engine, _ = self.make_engine()
        engine.register_workflow(ADMIN, review_workflow())
        run = engine.run_workflow(ADMIN, 'curate')
        daemon = Daemon(self.repo, engine=engine)
        self.assertFalse(engine.released_by_approval(run))
        self.assertEqual(daemon.cycle(), [])

        engine.approve_human_step(ADMIN, run.run_id, 'review')
        (handle,) = daemon.cycle()
        self.assertEqual(handle.run_id, run.run_id)
        self.assertEqual(handle.result().state, RunState.SUCCEEDED)
        self.assertIsNotNone(self.datasets.head('clean'))


class CrashedExecutorTests(WorkflowTestCase):
    def test_crashed_step_fails_and_frees_its_slots(self):
        engine, runner = self.make_engine(pool_size=2)
        engine.register_workflow(ADMIN, {'name': 'wf', 'steps': [
            {'id': 'a', 'kind': 'program', 'argv': ['true']},
            {'id': 'b', 'kind': 'program', 'argv': ['true']},
            {'id': 'c', 'kind': 'program', 'argv': ['true'], 'needs': ['a']},
        ]})
        with mock.patch.object(engine, 'prepare_step', side_effect=RuntimeError('scratch disk vanished')):
            with self.assertLogs('workflows.services', 'ERROR'):
                run = engine.run_workflow(ADMIN, 'wf')

        self.assertEqual(run.state, RunState.FAILED)
        for step_id in ('a', 'b'):
            self.assertEqual(run.steps[step_id].state, StepState.FAILED)
            self.assertIn('executor crashed: scratch disk vanished', run.steps[step_id].error)
        self.assertEqual(run.steps['c'].state, StepState.SKIPPED)
        self.assertEqual(engine.pool.in_use, 0)
        self.assertEqual(runner.calls, [])

        engine.register_workflow(ADMIN, {'name': 'after', 'steps': [
            {'id': 'wide', 'kind': 'program', 'argv': ['true'], 'cpu_slots': 2},
        ]})
        self.assertEqual(engine.run_workflow(ADMIN, 'after').state, RunState.SUCCEEDED)

    def test_daemon_fails_a_run_whose_driver_raised(self):
        engine, _ = self.make_engine()
        engine.register_workflow(ADMIN, {'name': 'wf', 'steps': [{'id': 'a', 'kind': 'program', 'argv': ['true']}]})
        daemon = Daemon(self.repo, engine=engine)
        with mock.patch.object(engine, 'advance', side_effect=RuntimeError('driver bug')):
            handle = engine.run_workflow(ADMIN, 'wf', wait=False)
        wait([handle.future])
        daemon._pending.append(handle)

        with self.assertLogs('workflows.daemon', 'ERROR'):
            (run,) = daemon.reap()
        self.assertEqual(run.state, RunState.FAILED)
        self.assertIn('driver bug', run.error)
        self.assertEqual(daemon.reap(), [])


class SlotPoolTests(SimpleTestCase):
    def test_acquire_release_and_peak(self):
        pool = SlotPool(3)
        self.assertTrue(pool.acquire(2, blocking=False))
        self.assertFalse(pool.acquire(2, blocking=False))
        self.assertTrue(pool.acquire(1, blocking=False))
        pool.release(3)
        self.assertEqual((pool.in_use, pool.peak), (0, 3))

    def test_blocking_acquire_waits_for_release(self):
        pool = SlotPool(1)
        pool.acquire(1)
        self.assertFalse(pool.acquire(1, timeout=0.01))
        releaser = threading.Timer(0.05, pool.release, args=(1,))
        releaser.start()
        self.assertTrue(pool.acquire(1, timeout=5))
        releaser.join()

    def test_invalid_sizes(self):
        with self.assertRaises(ValidationError):
            SlotPool(0)
        pool = SlotPool(2)
        with self.assertRaises(ValidationError):
            pool.acquire(3)
        with self.assertRaises(ValidationError):
            pool.release(1)
