'''
Misc Utility functions
'''

import hashlib
import os


def recursive_glob(rootdir='.', suffix=''):
    ''' Performs recursive glob with given suffix and rootdir, sorted '''
    return sorted(os.path.join(looproot, filename)
                  for looproot, _, filenames in os.walk(rootdir)
                  for filename in filenames if filename.endswith(suffix))


def sha256sum(path, chunk=1 << 16):
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for block in iter(lambda: f.read(chunk), b''):
            digest.update(block)
    return digest.hexdigest()
