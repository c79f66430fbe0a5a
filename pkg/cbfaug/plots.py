'''
Plot-ready data: gnuplot script stubs and optional PNG rendering
'''

import csv
import logging
import os

import numpy as np

logger = logging.getLogger(__name__)

GNUPLOT_TEMPLATE = '''# {title}
set datafile separator ","
set key autotitle columnhead
set xlabel "{xlabel}"
{extra}plot for [i=2:{columns}] "{data}" using 1:i with lines
'''


def read_columns(path):
    with open(path, newline='') as f:
        reader = csv.reader(f)
        header = next(reader)
        values = np.array([[float(v) for v in row] for row in reader])
    return header, values.reshape(-1, len(header))


def write_gnuplot_stub(data_path, title, xlabel='t [s]', logx=False):
    header, _ = read_columns(data_path)
    script = os.path.splitext(data_path)[0] + '.gp'
    with open(script, 'w') as f:
        f.write(GNUPLOT_TEMPLATE.format(title=title, xlabel=xlabel, columns=len(header),
                                        data=os.path.basename(data_path),
                                        extra='set logscale x\n' if logx else ''))
    return script


def render_png(data_path, title, xlabel='t [s]', logx=False, columns=None):
    '''Draw every column against the first one, one panel per column.'''
    import matplotlib
    matplotlib.use('Agg')
    import matplotlib.pyplot as plt

    header, values = read_columns(data_path)
    names = columns or header[1:]
    fig, axes = plt.subplots(len(names), 1, figsize=(10, 2.2 * len(names)), sharex=True, squeeze=False)
    for ax, name in zip(axes[:, 0], names):
        ax.plot(values[:, 0], values[:, header.index(name)])
        ax.set_ylabel(name)
        ax.grid(True, alpha=0.3)
        if logx:
            ax.set_xscale('log')
    axes[-1, 0].set_xlabel(xlabel)
    axes[0, 0].set_title(title)
    png = os.path.splitext(data_path)[0] + '.png'
    fig.savefig(png, dpi=150, bbox_inches='tight')
    plt.close(fig)
    logger.debug('rendered %s', png)
    return png
