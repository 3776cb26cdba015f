from repository.exceptions import PermissionDenied, WorkflowError
from repository.testing import ADMIN, RepositoryTestCase
from workflows.registry import WorkflowRegistry, parse_definition, topological_order


def program(step_id, *needs, **extra):
    return {'id': step_id, 'kind': 'program', 'needs': list(needs), 'argv': ['true'], **extra}


def definition(*steps, **extra):
    return {'name': 'wf', 'steps': list(steps), **extra}


class DefinitionValidationTests(RepositoryTestCase):
    def assertRejected(self, payload, fragment):
        with self.assertRaises(WorkflowError) as caught:
            parse_definition(payload, owner=ADMIN)
        self.assertIn(fragment, str(caught.exception))

    def test_cycle(self):
        self.assertRejected(definition(program('a', 'c'), program('b', 'a'), program('c', 'b')), 'cycle')

    def test_self_dependency(self):
        self.assertRejected(definition(program('a', 'a')), 'needs itself')

    def test_dangling_need(self):
        self.assertRejected(definition(program('a', 'ghost')), 'unknown step')

    def test_duplicate_ids(self):
        self.assertRejected(definition(program('a'), program('a')), 'duplicate step ids')

    def test_two_terminal_steps(self):
        self.assertRejected(definition(program('a', terminal=True), program('b', terminal=True)), 'more than one terminal')

    def test_output_needs_a_terminal_step(self):
        self.assertRejected(definition(program('a'), output={'dataset': 'out'}), 'terminal')

    def test_structural_errors(self):
        cases = [
            (definition({'id': 'a', 'kind': 'program'}), 'nonempty argv'),
            (definition({'id': 'a', 'kind': 'human', 'argv': ['x']}), 'no argv'),
            (definition(program('a'), program('b', 'a', input={'query': {'dataset': 'raw'}})), 'source steps'),
            (definition(program('a', colour='red')), 'colour: unknown key'),
            (definition(program('a', input={})), 'query or'),
            (definition(program('a'), triggers=[{'kind': 'event'}]), 'need a query'),
            (definition(program('a'), triggers=[{'kind': 'schedule'}]), 'cron'),
            ({'name': 'wf', 'steps': []}, 'steps'),
            (definition(program('a'), trigger=[]), 'trigger: unknown key'),
            (definition(program('a'), triggers=[{'kind': 'event', 'query': {'datset': 'raw'}}]), 'datset: unknown key'),
        ]
        for payload, fragment in cases:
            with self.subTest(fragment=fragment):
                self.assertRejected(payload, fragment)

    def test_cron_expressions(self):
        for cron in ('* * *', '61 * * * *', '0 0 30 2 *'):
            with self.subTest(cron=cron):
                with self.assertRaises(WorkflowError):
                    parse_definition(definition(program('a'), triggers=[{'kind': 'schedule', 'cron': cron}]), owner=ADMIN)
        parsed = parse_definition(definition(program('a'), triggers=[{'kind': 'schedule', 'cron': '*/5  *  * * 1-5'}]), owner=ADMIN)
        self.assertEqual(parsed.triggers[0].cron, '*/5 * * * 1-5')

    def test_topological_order_breaks_ties_by_position(self):
        parsed = parse_definition(definition(program('z'), program('y', 'z'), program('a'), program('m', 'a', 'y')), owner=ADMIN)
        self.assertEqual(topological_order(parsed), ['z', 'y', 'a', 'm'])


class RegistryTests(RepositoryTestCase):
    def setUp(self):
        super().setUp()
        self.registry = WorkflowRegistry(self.repo)

    def test_versions_are_content_addressed(self):
        first = self.registry.register(ADMIN, definition(program('a')))
        same = self.registry.register(ADMIN, definition(program('a')))
        changed = self.registry.register(ADMIN, definition(program('a'), program('b', 'a')))
        self.assertEqual(first.def_id, same.def_id)
        self.assertNotEqual(first.def_id, changed.def_id)
        self.assertEqual([v.version for v in self.registry.history('wf')], [1, 2])
        self.assertEqual(self.registry.latest('wf').def_id, changed.def_id)
        self.assertEqual(self.registry.get(first.def_id).steps[0].id, 'a')

    def test_registrant_becomes_owner(self):
        self.access.grant(ADMIN, 'bob', 'out', 'writer')
        registered = self.registry.register('bob', definition(program('a', terminal=True), output={'dataset': 'out'}, owner='mallory'))
        self.assertEqual(registered.owner, 'bob')

    def test_output_dataset_needs_write_access(self):
        self.access.grant(ADMIN, 'bob', 'out', 'reader')
        with self.assertRaises(PermissionDenied):
            self.registry.register('bob', definition(program('a', terminal=True), output={'dataset': 'out'}))

    def test_names(self):
        self.registry.register(ADMIN, definition(program('a')))
        self.registry.register(ADMIN, {**definition(program('a')), 'name': 'another'})
        self.assertEqual(self.registry.names(), ['another', 'wf'])
