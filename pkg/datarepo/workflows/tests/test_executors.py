from repository.testing import ADMIN, RepositoryTestCase, read_tree, write_tree
from workflows.executors import StepContext, SubprocessStepRunner, read_tail
from workflows.models import RunState, Step, StepKind, StepState
from workflows.services import WorkflowEngine


class SubprocessStepRunnerTests(RepositoryTestCase):
    def context(self, *argv, **step_fields):
        step = Step(id='work', kind=StepKind.PROGRAM, argv=argv, **step_fields)
        context = StepContext(run_id='RUN1', step=step, step_dir=self.path('steps', 'work'))
        write_tree(context.inputs_dir, {'in.txt': b'payload'})
        context.outputs_dir.mkdir(parents=True)
        return context

    def test_environment_and_placeholders(self):
        context = self.context(
            'sh', '-c', 'cp "$DSR_INPUTS/in.txt" "$1/copy.txt" && echo "$DSR_RUN_ID:$DSR_STEP_ID" > "$DSR_OUTPUTS/ids"',
            'sh', '{outputs}',
        )
        result = SubprocessStepRunner()(context)
        self.assertEqual(result.state, StepState.SUCCEEDED)
        self.assertEqual(result.exit_code, 0)
        self.assertEqual(read_tree(context.outputs_dir), {'copy.txt': b'payload', 'ids': b'RUN1:work\n'})

    def test_nonzero_exit_fails_with_stderr_tail(self):
        result = SubprocessStepRunner()(self.context('sh', '-c', 'echo broken >&2; exit 3'))
        self.assertEqual(result.state, StepState.FAILED)
        self.assertEqual(result.exit_code, 3)
        self.assertEqual(result.stderr_tail, 'broken\n')

    def test_missing_executable(self):
        result = SubprocessStepRunner()(self.context('/nonexistent/tool'))
        self.assertEqual(result.state, StepState.FAILED)
        self.assertIn('executable not found', result.error)

    def test_timeout(self):
        result = SubprocessStepRunner()(self.context('sleep', '5', timeout_seconds=0.2))
        self.assertEqual(result.state, StepState.FAILED)
        self.assertIn('timed out', result.error)

    def test_stderr_tail_is_bounded(self):
        result = SubprocessStepRunner(tail_bytes=10)(self.context('sh', '-c', 'printf "0123456789abcdef" >&2; exit 1'))
        self.assertEqual(result.stderr_tail, '6789abcdef')
        self.assertEqual(read_tail(self.path('missing.log'), 10), '')


class SubprocessWorkflowTests(RepositoryTestCase):
    def test_end_to_end_with_real_processes(self):
        self.checkin_files('raw', {'numbers.txt': b'3\n1\n2\n'})
        with WorkflowEngine(self.repo, pool_size=2, datasets=self.datasets) as engine:
            engine.register_workflow(ADMIN, {
                'name': 'sort',
                'steps': [
                    {'id': 'sort', 'kind': 'program', 'input': {'query': {'dataset': 'raw', 'head_only': True}},
                     'argv': ['sh', '-c', 'sort "$DSR_INPUTS/numbers.txt" > "$DSR_OUTPUTS/numbers.txt"']},
                    {'id': 'count', 'kind': 'program', 'needs': ['sort'], 'terminal': True,
                     'argv': ['sh', '-c', 'cp inputs/numbers.txt outputs/ && wc -l < inputs/numbers.txt | tr -d " " > outputs/count']},
                ],
                'output': {'dataset': 'sorted'},
            })
            run = engine.run_workflow(ADMIN, 'sort')
        self.assertEqual(run.state, RunState.SUCCEEDED, run.error)
        manifest = self.datasets.store.get_manifest(self.datasets.load_commit(run.output_commit).manifest_id)
        blobs = {entry.path: self.datasets.store.get_blob(entry) for entry in manifest.entries}
        self.assertEqual(blobs, {'count': b'3\n', 'numbers.txt': b'1\n2\n3\n'})
