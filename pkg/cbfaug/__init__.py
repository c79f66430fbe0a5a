'''
Min-norm CBF augmentation of LTI servo controllers under box limits
'''
