from options.base_options import BaseOptions

SWEEP_AXES = ('order', 'eps', 'alpha', 'method', 'hidden')


class TrainOptions(BaseOptions):
    def initialize(self, parser):
        parser = BaseOptions.initialize(self, parser)
        parser.add_argument('--progress', action='store_true', help='show tqdm progress bars for epochs and sweep values')
        parser.add_argument('--axis', type=str, default=None, help='sweep only: order | eps | alpha | method | hidden')
        parser.add_argument('--values', type=str, nargs='+', default=None,
                            help='sweep only: values of the axis; eps and hidden values are comma separated, '
                                 'e.g. 0,0.001,0.01 or 64,32')
        self.isTrain = True
        return parser
